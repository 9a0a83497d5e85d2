#pragma once

// Simulation scenarios and replication runners for the threshold-learning
// study (four scalar scenarios) and the covariate-shift evaluation study
// (ten-dimensional Gaussian covariates with an optional mean shift).

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"
#include "covshift/policylearn.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace covshift {

enum class ScenarioName { kallus1, kallus2, kallus3, kallus4, mo_noshift, mo_shift };
enum class NuisanceMode { truth, fitted };

std::string to_string(ScenarioName name);
ScenarioName parse_scenario(const std::string& name);
bool is_threshold_scenario(ScenarioName name);

struct ScenarioSpec {
  ScenarioName name = ScenarioName::kallus1;
  Index n_train = 500;
  Index n_calib = 0;
  Index n_test = 20000;
  int replications = 200;
  std::uint64_t seed = 1;
  NuisanceMode nuisance_mode = NuisanceMode::fitted;

  void validate() const;
};

inline constexpr Index kShiftDimension = 10;

/// Calibration mean of the shifted Gaussian design.
Eigen::VectorXd shift_mean();

/// True mu, phi, sigma2, cate (and w* for the shifted design).
NuisanceSet true_nuisances(ScenarioName name);
/// Root of the true conditional effect for the scalar scenarios.
double theta_sharp(ScenarioName name);
/// pi(1|x) = 1{x2 - (x1^3 - 2 x1) > 0}.
PolicyPtr shift_study_policy();

struct GeneratedSample {
  LabeledDataset data;
  Covariates test;  ///< fresh covariates for regret evaluation; empty for the shift study
};

/// Deterministic in (spec.seed, replication).
GeneratedSample generate(const ScenarioSpec& spec, int replication);

/// Learner settings per nuisance of the scalar scenarios.
struct ThresholdNuisanceOptions {
  BoostingOptions mean;
  BoostingOptions propensity;
  /// Fixed tree count and larger leaves; squared residuals are heavy tailed.
  BoostingOptions variance{.trees = 500, .depth = 2, .shrinkage = 0.05, .min_leaf = 20, .cv_folds = 0};
  /// When >= 2, the variance is fit to squared residuals of out-of-fold mean fits.
  int residual_folds = 0;
};

/// Boosted arm means and propensity (clipped to [0.01, 0.99]) and boosted
/// squared residuals for the conditional variance.
NuisanceSet fit_threshold_nuisances(const LabeledDataset& data, const ThresholdNuisanceOptions& options = {});
/// Sieve arm means on training rows, logistic selection, known propensity 0.5.
NuisanceSet fit_shift_nuisances(const LabeledDataset& data, const SieveOptions& options = {});

struct ShiftTruth {
  double value = 0.0;     ///< V(pi; w*)
  double centered = 0.0;  ///< V(pi; w*) - V(complement; w*)
};
ShiftTruth shift_study_truth(bool shift, std::size_t draws = 1000000, std::uint64_t seed = 20240607);

struct Table1Options {
  std::vector<ScenarioName> scenarios{ScenarioName::kallus1, ScenarioName::kallus2, ScenarioName::kallus3,
                                      ScenarioName::kallus4};
  Index n_train = 500;
  Index n_test = 20000;
  int replications = 200;
  std::uint64_t seed = 1;
  NuisanceMode nuisance_mode = NuisanceMode::fitted;
  CrossfitOptions crossfit;
  ThresholdNuisanceOptions nuisance;
  unsigned threads = 0;
};

/// Columns of the threshold study, in output order.
const std::vector<std::string>& table1_columns();

struct Table1Rep {
  ScenarioName scenario;
  int replication = 0;
  bool ok = true;
  std::string error;
  std::vector<double> theta_hat;  ///< per column
  std::vector<double> regret;     ///< per column
  double oracle_t = std::numeric_limits<double>::quiet_NaN();
  double local_t = std::numeric_limits<double>::quiet_NaN();
  std::size_t fallbacks = 0;
};

struct Table1Cell {
  ScenarioName scenario;
  std::string column;
  double mean_bias = 0.0;
  double sd_bias = 0.0;
  double mean_regret = 0.0;
  double sd_regret = 0.0;
  int reps_ok = 0;
  int reps_failed = 0;
};

struct Table1Result {
  std::vector<Table1Rep> reps;
  std::vector<Table1Cell> cells;
  /// Fraction of successful reps whose oracle weight selected t = 1 (resp. t = 0), per scenario.
  std::vector<double> oracle_t_one;
  std::vector<double> oracle_t_zero;
  std::size_t fallbacks = 0;
};

Table1Result run_table1(const Table1Options& options);
void write_table1_csv(std::ostream& out, const Table1Result& result);
std::string table1_markdown(const Table1Result& result);

struct Table2Options {
  std::vector<Index> n_calib{50, 200, 1000};
  std::vector<bool> shifts{false, true};
  Index n_train = 1000;
  int replications = 200;
  std::uint64_t seed = 1;
  int folds = 2;
  std::size_t truth_draws = 1000000;
  int bootstrap = 2000;
  SieveOptions sieve;
  BoostingOptions boosting;
  unsigned threads = 0;
};

/// (estimator, target) columns; target is "V" for the value and "R" for the centered value.
const std::vector<std::pair<std::string, std::string>>& table2_columns();

struct Table2Cell {
  bool shift = false;
  Index n_calib = 0;
  std::string estimator;
  std::string target;
  double mse = 0.0;
  double bias2 = 0.0;
  double variance = 0.0;
  double mse_lo = 0.0;  ///< bootstrap 5% quantile of the MSE
  double mse_hi = 0.0;  ///< bootstrap 95% quantile of the MSE
  int reps_ok = 0;
  int reps_failed = 0;
};

struct Table2Result {
  std::vector<Table2Cell> cells;
  std::vector<ShiftTruth> truths;  ///< per entry of options.shifts
};

Table2Result run_table2(const Table2Options& options);
void write_table2_csv(std::ostream& out, const Table2Result& result);
std::string table2_markdown(const Table2Result& result);

const Table2Cell& find_cell(const Table2Result& result, bool shift, Index n_calib, const std::string& estimator,
                            const std::string& target);
const Table1Cell& find_cell(const Table1Result& result, ScenarioName scenario, const std::string& column);

}  // namespace covshift
