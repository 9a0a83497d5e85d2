#pragma once

// Weighted-value estimation and threshold-policy learning, including the
// two-fold cross-fitted learner with data-driven weights and Monte Carlo
// regret evaluation against known arm means.

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"
#include "covshift/retarget.hpp"

#include <optional>
#include <string>
#include <vector>

namespace covshift {

/// mean over rows of w(X) [sum_a pi(a|X) mu(a,X) + pi(A|X) / phi(A|X) (Y - mu(A,X))]
/// with phi taken at the training site and clipped to [0.01, 0.99].
double weighted_value_estimate(const Policy& pi, const WeightFn& w, const LabeledDataset& rows,
                               const NuisanceSet& nuisances);

/// Sorted distinct first coordinates of the rows, plus lo and hi.
std::vector<double> threshold_grid(const Covariates& x, double lo = -1.0, double hi = 1.0);

/// Per-threshold weighted value of pi_theta over a fixed sample, evaluated for
/// a whole grid at once from suffix sums of the per-row treatment contrasts.
class ThresholdObjective {
 public:
  ThresholdObjective(const WeightFn& w, const LabeledDataset& rows, const NuisanceSet& nuisances);
  /// Values at the grid points in order.
  std::vector<double> evaluate(const std::vector<double>& grid) const;

 private:
  std::vector<double> sorted_x_;
  std::vector<double> suffix_;  ///< suffix_[k] = sum of contrasts of rows k.. in sorted order
  double base_ = 0.0;           ///< sum of weighted control-arm terms
  double count_ = 1.0;
};

/// Index of the first grid point attaining the maximum, up to a relative
/// tolerance of 1e-12 on the objective scale.
std::size_t first_argmax(const std::vector<double>& values);

struct ThresholdFit {
  double theta = 0.0;
  std::vector<double> objective;
};

/// argmax over the grid of weighted_value_estimate(pi_theta, w, rows); ties
/// toward the smallest theta.
ThresholdFit learn_threshold(const WeightFn& w, const LabeledDataset& rows, const NuisanceSet& nuisances,
                             const std::vector<double>& theta_grid);

/// Two-fold split of the rows, labels 1 and 2.
struct CrossfitPlan {
  std::vector<int> fold_of_row;
  std::uint64_t seed = 0;

  static CrossfitPlan make(Index n, std::uint64_t seed);
  std::vector<Index> rows_of(int fold) const;
};

enum class WeightRecipe { retarget, uniform, local_curvature, global_curvature };

WeightRecipe parse_weight_recipe(const std::string& name);
std::string to_string(WeightRecipe recipe);

struct CrossfitOptions {
  std::vector<double> t_grid = linspace(0.0, 1.0, 101);
  /// Half-width of the slope window for the fitted conditional effect.
  double derivative_step = 0.4;
  double grid_lo = -1.0;
  double grid_hi = 1.0;
};

/// Nuisances fit once per fold and shared across weight recipes.
class CrossfitContext {
 public:
  CrossfitContext(const LabeledDataset& data, CrossfitPlan plan, const NuisanceFitter& fitter);

  const LabeledDataset& data() const { return data_; }
  const CrossfitPlan& plan() const { return plan_; }
  const LabeledDataset& fold(int j) const { return folds_[static_cast<std::size_t>(j - 1)]; }
  /// Nuisances fit on fold j.
  const NuisanceSet& nuisances(int j) const { return nuisances_[static_cast<std::size_t>(j - 1)]; }

 private:
  LabeledDataset data_;
  CrossfitPlan plan_;
  std::vector<LabeledDataset> folds_;
  std::vector<NuisanceSet> nuisances_;
};

struct LearnResult {
  double theta_hat = 0.0;
  std::optional<double> t_selected;  ///< local-curvature recipes: oracle t, or the mean of the fold t values
  std::vector<double> t_by_fold;
  std::size_t weight_fallbacks = 0;  ///< folds whose weight degenerated and fell back to w = 1
  std::vector<std::string> warnings;
};

LearnResult crossfit_learn(const CrossfitContext& context, WeightRecipe recipe, const CrossfitOptions& options = {});
LearnResult crossfit_learn(const LabeledDataset& data, WeightRecipe recipe, const NuisanceFitter& fitter,
                           std::uint64_t seed, const CrossfitOptions& options = {});

/// Weight and policy from the same rows and nuisances, without cross-fitting.
LearnResult full_sample_learn(const LabeledDataset& data, WeightRecipe recipe, const NuisanceSet& nuisances,
                              const CrossfitOptions& options = {});

/// Local-curvature weight at a supplied theta_sharp with nuisances fit on all
/// rows and no cross-fitting.
LearnResult oracle_local_learn(const LabeledDataset& data, const NuisanceSet& nuisances, double theta_sharp,
                               const CrossfitOptions& options = {});

struct Regret {
  double value = 0.0;
  double se = 0.0;
  double best_theta = 0.0;
};

/// Regret of threshold policies on a fixed test sample with true arm means:
/// V(pi_theta; w*) = mean of w*(X) sum_a pi_theta(a|X) mu(a,X). The supremum
/// runs over every threshold, which reduces to the sample points.
class RegretEvaluator {
 public:
  RegretEvaluator(const Covariates& test, const NuisanceSet& truth, const WeightFn& w_star);
  double value(double theta) const;
  Regret regret(double theta_hat) const;

 private:
  std::vector<double> sorted_x_;
  std::vector<double> contrast_;  ///< w* C in sorted order
  std::vector<double> suffix_;
  double base_ = 0.0;
  double best_theta_ = 0.0;
  double best_value_ = 0.0;
};

Regret regret_eval(const ThresholdPolicy& pi, const Covariates& test, const NuisanceSet& truth,
                   const WeightFn& w_star);

}  // namespace covshift
