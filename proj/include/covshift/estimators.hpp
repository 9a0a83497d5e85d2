#pragma once

// Policy-value estimators for a calibration population whose covariate law
// differs from the training law: IPW and AIPW on calibration labels, the
// efficient and covariates-only estimators that pool both sites, the
// centered plug-in, and the nuisance learners that feed them.

#include "covshift/core.hpp"
#include "covshift/regression.hpp"

#include <optional>
#include <string>
#include <vector>

namespace covshift {

enum class EstimatorTag { ipw, aipw, eff, onlyx, plugin };

std::string to_string(EstimatorTag tag);
EstimatorTag parse_estimator(const std::string& name);

struct ValueEstimate {
  double point = 0.0;
  std::optional<double> if_variance;   ///< empty for the plug-in
  Index n_used = 0;
  EstimatorTag tag = EstimatorTag::ipw;
  double clipped_fraction = 0.0;
  std::vector<double> influence;      ///< per-row influence values, empty for the plug-in
};

inline constexpr double kPropensityLow = 0.01;
inline constexpr double kPropensityHigh = 0.99;
inline constexpr double kDensityRatioLow = 0.01;
inline constexpr double kDensityRatioHigh = 100.0;

/// phi(a | x, s) clipped to [0.01, 0.99].
double clipped_propensity(const NuisanceSet& nuisances, int action, CovRef x, int site, ClipStats* clips = nullptr);

struct DensityRatioFit {
  WeightFn w_star;                        ///< clipped to [0.01, 100]
  std::function<double(CovRef)> sel;      ///< P(S = 1 | x) from logistic regression
  double p_s1 = 0.0;                      ///< empirical P(S = 1)
};

/// w*(x) = P(S=1) P(S=0|x) / (P(S=0) P(S=1|x)) with empirical site fractions.
DensityRatioFit fit_density_ratio(const LabeledDataset& data, const LogisticOptions& options = {});

ValueEstimate value_ipw(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances);
ValueEstimate value_aipw(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances);
ValueEstimate value_eff(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances);
ValueEstimate value_onlyx(const Policy& rho, const LabeledDataset& data, const NuisanceSet& nuisances);

/// V(pi) - V(complement of pi), binary actions.
ValueEstimate centered_eff(PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances);
ValueEstimate centered_onlyx(PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances);

/// Mean over calibration covariates of (2 pi(1|x) - 1) cate(x).
ValueEstimate centered_value_plugin(const Policy& pi, const Covariates& calibration,
                                    const std::function<double(CovRef)>& cate);

/// Value (or centered value) with fixed nuisances. The plug-in reads
/// nuisances.cate, falling back to the mu difference.
ValueEstimate estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances,
                       bool centered = false);

enum class MuSource { train, calib, pooled };
MuSource parse_mu_source(const std::string& name);

struct NuisanceFitOptions {
  RegressionFamily outcome_learner = RegressionFamily::sieve_poly;
  MuSource mu_source = MuSource::train;
  /// Known P(A = 1 | x) at both sites; fitted by logistic regression when empty.
  std::optional<double> known_propensity;
  SieveOptions sieve;
  BoostingOptions boosting;
  LogisticOptions logistic;
};

/// Per-arm outcome regressions, propensities and (when both sites are
/// present) the density ratio and selection probability.
NuisanceSet fit_value_nuisances(const LabeledDataset& data, const NuisanceFitOptions& options = {});

using NuisanceFitter = std::function<NuisanceSet(const LabeledDataset&)>;

/// Cross-fitted estimate: nuisances for each fold come from the other folds
/// and the per-row terms are pooled. folds <= 1 fits once on all rows.
ValueEstimate crossfit_estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data,
                                const NuisanceFitter& fitter, int folds = 2, std::uint64_t seed = 0,
                                bool centered = false);

/// Fold label per row, balanced within each site, from a seeded shuffle.
std::vector<int> fold_assignment(const LabeledDataset& data, int folds, std::uint64_t seed);

/// Cross-fitted estimate from precomputed per-fold nuisances, where
/// fold_nuisances[f] was fit without the rows labeled f.
ValueEstimate crossfit_estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data,
                                const std::vector<int>& fold, const std::vector<NuisanceSet>& fold_nuisances,
                                bool centered = false);

/// Nuisances for each fold, fit on the remaining rows.
std::vector<NuisanceSet> fit_fold_nuisances(const LabeledDataset& data, const std::vector<int>& fold, int folds,
                                            const NuisanceFitter& fitter);

/// Boosted fit of Y A / phi(A | X, 1) on training rows, an unbiased signal for
/// the conditional effect when A is binary in {-1, 1}.
FittedRegression fit_cate_signal(const LabeledDataset& data, const NuisanceSet& nuisances,
                                 const BoostingOptions& options = {});

}  // namespace covshift
