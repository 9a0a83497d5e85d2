#include "covshift/policylearn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace covshift {

namespace {

void require_binary(const NuisanceSet& nuisances) {
  if (nuisances.actions != binary_actions()) throw ConfigurationError("threshold policies need actions {-1, 1}");
}

double training_propensity(const NuisanceSet& nuisances, int a, CovRef x) {
  const double phi = clipped_propensity(nuisances, a, x, kTrainingSite);
  if (!(phi > 0.0 && phi < 1.0)) throw PositivityError("propensity outside (0, 1) after clipping");
  return phi;
}

// mu(a, x) + 1{A = a} / phi(a | x) (Y - mu(a, x)).
double arm_score(const LabeledDataset& rows, Index i, int a, const NuisanceSet& nuisances) {
  const auto x = rows.x(i);
  const double m = nuisances.mu(a, x);
  if (rows.action(i) != a) return m;
  return m + (rows.outcome(i) - m) / training_propensity(nuisances, a, x);
}

}  // namespace

double weighted_value_estimate(const Policy& pi, const WeightFn& w, const LabeledDataset& rows,
                               const NuisanceSet& nuisances) {
  nuisances.require_mu();
  std::vector<double> terms;
  terms.reserve(static_cast<std::size_t>(rows.n()));
  for (Index i = 0; i < rows.n(); ++i) {
    if (!rows.observed(i)) throw MissingDataError("weighted value needs (A, Y) on every row");
    const auto x = rows.x(i);
    double plug = 0.0;
    for (int a : nuisances.actions) {
      const double q = pi.prob(a, x);
      if (q != 0.0) plug += q * nuisances.mu(a, x);
    }
    const int a = rows.action(i);
    const double resid = pi.prob(a, x) / training_propensity(nuisances, a, x) * (rows.outcome(i) - nuisances.mu(a, x));
    terms.push_back(w(x) * (plug + resid));
  }
  return order_free_mean(std::move(terms));
}

std::vector<double> threshold_grid(const Covariates& x, double lo, double hi) {
  std::vector<double> grid;
  grid.reserve(static_cast<std::size_t>(x.rows()) + 2);
  grid.push_back(lo);
  grid.push_back(hi);
  for (Index i = 0; i < x.rows(); ++i) grid.push_back(x(i, 0));
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

ThresholdObjective::ThresholdObjective(const WeightFn& w, const LabeledDataset& rows, const NuisanceSet& nuisances) {
  require_binary(nuisances);
  nuisances.require_mu();
  const Index n = rows.n();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return rows.covariates()(a, 0) < rows.covariates()(b, 0); });
  sorted_x_.resize(order.size());
  suffix_.assign(order.size() + 1, 0.0);
  std::vector<double> contrast(order.size());
  std::vector<double> control(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Index i = order[k];
    if (!rows.observed(i)) throw MissingDataError("threshold learning needs (A, Y) on every row");
    sorted_x_[k] = rows.covariates()(i, 0);
    const double wi = w(rows.x(i));
    control[k] = wi * arm_score(rows, i, -1, nuisances);
    contrast[k] = wi * arm_score(rows, i, 1, nuisances) - control[k];
  }
  for (std::size_t k = order.size(); k-- > 0;) suffix_[k] = suffix_[k + 1] + contrast[k];
  base_ = compensated_sum(control);
  count_ = static_cast<double>(n);
}

std::vector<double> ThresholdObjective::evaluate(const std::vector<double>& grid) const {
  std::vector<double> out(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto k = static_cast<std::size_t>(std::upper_bound(sorted_x_.begin(), sorted_x_.end(), grid[g]) -
                                            sorted_x_.begin());
    out[g] = (base_ + suffix_[k]) / count_;
  }
  return out;
}

std::size_t first_argmax(const std::vector<double>& values) {
  if (values.empty()) throw ConfigurationError("empty objective");
  double scale = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) scale = std::max(scale, std::abs(v));
  }
  const double tol = 1e-12 * scale;
  std::size_t best = 0;
  for (std::size_t g = 1; g < values.size(); ++g) {
    if (values[g] > values[best] + tol || (std::isnan(values[best]) && !std::isnan(values[g]))) best = g;
  }
  return best;
}

ThresholdFit learn_threshold(const WeightFn& w, const LabeledDataset& rows, const NuisanceSet& nuisances,
                             const std::vector<double>& theta_grid) {
  if (theta_grid.empty()) throw ConfigurationError("empty theta grid");
  std::vector<double> grid = theta_grid;
  std::sort(grid.begin(), grid.end());
  ThresholdFit fit;
  fit.objective = ThresholdObjective(w, rows, nuisances).evaluate(grid);
  fit.theta = grid[first_argmax(fit.objective)];
  return fit;
}

CrossfitPlan CrossfitPlan::make(Index n, std::uint64_t seed) {
  if (n < 2) throw InvalidDataError("cross-fitting needs at least two rows");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  auto rng = make_stream(seed, 0, 0xC2F7);
  std::shuffle(order.begin(), order.end(), rng);
  CrossfitPlan plan;
  plan.seed = seed;
  plan.fold_of_row.assign(static_cast<std::size_t>(n), 2);
  for (std::size_t k = 0; k < order.size() / 2; ++k) plan.fold_of_row[static_cast<std::size_t>(order[k])] = 1;
  return plan;
}

std::vector<Index> CrossfitPlan::rows_of(int fold) const {
  std::vector<Index> rows;
  for (std::size_t i = 0; i < fold_of_row.size(); ++i) {
    if (fold_of_row[i] == fold) rows.push_back(static_cast<Index>(i));
  }
  return rows;
}

WeightRecipe parse_weight_recipe(const std::string& name) {
  if (name == "retarget") return WeightRecipe::retarget;
  if (name == "uniform") return WeightRecipe::uniform;
  if (name == "local" || name == "local_curvature") return WeightRecipe::local_curvature;
  if (name == "global" || name == "global_curvature") return WeightRecipe::global_curvature;
  throw ConfigurationError("unknown weight recipe '" + name + "'");
}

std::string to_string(WeightRecipe recipe) {
  switch (recipe) {
    case WeightRecipe::retarget: return "retarget";
    case WeightRecipe::uniform: return "uniform";
    case WeightRecipe::local_curvature: return "local";
    case WeightRecipe::global_curvature: return "global";
  }
  return "unknown";
}

CrossfitContext::CrossfitContext(const LabeledDataset& data, CrossfitPlan plan, const NuisanceFitter& fitter)
    : data_(data), plan_(std::move(plan)) {
  if (static_cast<Index>(plan_.fold_of_row.size()) != data_.n()) throw ConfigurationError("plan size mismatch");
  for (int j : {1, 2}) {
    const auto rows = plan_.rows_of(j);
    if (rows.empty()) throw ConfigurationError("cross-fitting fold is empty");
    folds_.push_back(data_.subset(rows));
  }
  for (int j : {1, 2}) nuisances_.push_back(fitter(folds_[static_cast<std::size_t>(j - 1)]));
}

namespace {

std::vector<double> first_coordinates(const LabeledDataset& data) {
  std::vector<double> out(static_cast<std::size_t>(data.n()));
  for (Index i = 0; i < data.n(); ++i) out[static_cast<std::size_t>(i)] = data.covariates()(i, 0);
  return out;
}

// theta(t) maximizing the in-sample value under (1 - t) w0 + t, using that the
// objective is linear in the weight.
std::function<double(double)> interpolated_theta(const WeightFn& w0, const LabeledDataset& rows,
                                                 const NuisanceSet& nuisances, const std::vector<double>& grid) {
  const auto under_w0 = ThresholdObjective(w0, rows, nuisances).evaluate(grid);
  const auto under_one = ThresholdObjective(WeightFn::uniform(), rows, nuisances).evaluate(grid);
  return [under_w0, under_one, grid](double t) {
    std::vector<double> v(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) v[g] = (1.0 - t) * under_w0[g] + t * under_one[g];
    return grid[first_argmax(v)];
  };
}

}  // namespace

namespace {

// Weight for one evaluation fold. Retarget and global weights come from the
// reference rows; the local weight takes theta(t) from the reference rows and
// its curvature and Omega from the own rows.
WeightFn build_weight(WeightRecipe recipe, const LabeledDataset& own, const NuisanceSet& own_nuis,
                      const LabeledDataset& reference, const NuisanceSet& reference_nuis,
                      const std::vector<double>& grid, const CrossfitOptions& options, LearnResult& result) {
  try {
    switch (recipe) {
      case WeightRecipe::uniform:
        break;
      case WeightRecipe::retarget:
        return weight_retargeting(Population(reference.covariates()), reference_nuis);
      case WeightRecipe::global_curvature:
        return weight_global_curvature(Population(reference.covariates()), reference_nuis);
      case WeightRecipe::local_curvature: {
        const WeightFn w0 = weight_retargeting(Population(reference.covariates()), reference_nuis);
        const auto theta_of_t = interpolated_theta(w0, reference, reference_nuis, grid);
        const KernelDensity density(first_coordinates(own));
        LocalCurvatureOptions lopts;
        lopts.t_grid = options.t_grid;
        lopts.derivative_step = options.derivative_step;
        auto local = weight_local_curvature(theta_of_t, Population(own.covariates()), own_nuis,
                                            [&density](double x) { return density(x); }, lopts);
        result.t_by_fold.push_back(local.t);
        return local.weight;
      }
    }
  } catch (const DegenerateWeightError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  } catch (const CurvatureDegenerateError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  } catch (const NoSignalError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  } catch (const UnboundedWeightError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  }
  return WeightFn::uniform();
}

void summarize_t(LearnResult& result) {
  if (!result.t_by_fold.empty()) {
    result.t_selected = std::accumulate(result.t_by_fold.begin(), result.t_by_fold.end(), 0.0) /
                        static_cast<double>(result.t_by_fold.size());
  }
}

}  // namespace

LearnResult crossfit_learn(const CrossfitContext& context, WeightRecipe recipe, const CrossfitOptions& options) {
  const LabeledDataset& data = context.data();
  if (data.n() < 20) throw InvalidDataError("cross-fitted learning needs at least 20 rows");
  const auto grid = threshold_grid(data.covariates(), options.grid_lo, options.grid_hi);
  LearnResult result;
  std::vector<double> total(grid.size(), 0.0);
  for (int j : {1, 2}) {
    const int o = 3 - j;
    const WeightFn w = build_weight(recipe, context.fold(j), context.nuisances(j), context.fold(o),
                                    context.nuisances(o), grid, options, result);
    const auto values = ThresholdObjective(w, context.fold(j), context.nuisances(o)).evaluate(grid);
    for (std::size_t g = 0; g < grid.size(); ++g) total[g] += values[g];
  }
  result.theta_hat = grid[first_argmax(total)];
  summarize_t(result);
  return result;
}

LearnResult full_sample_learn(const LabeledDataset& data, WeightRecipe recipe, const NuisanceSet& nuisances,
                              const CrossfitOptions& options) {
  const auto grid = threshold_grid(data.covariates(), options.grid_lo, options.grid_hi);
  LearnResult result;
  const WeightFn w = build_weight(recipe, data, nuisances, data, nuisances, grid, options, result);
  result.theta_hat = learn_threshold(w, data, nuisances, grid).theta;
  summarize_t(result);
  return result;
}

LearnResult crossfit_learn(const LabeledDataset& data, WeightRecipe recipe, const NuisanceFitter& fitter,
                           std::uint64_t seed, const CrossfitOptions& options) {
  const CrossfitContext context(data, CrossfitPlan::make(data.n(), seed), fitter);
  return crossfit_learn(context, recipe, options);
}

LearnResult oracle_local_learn(const LabeledDataset& data, const NuisanceSet& nuisances, double theta_sharp,
                               const CrossfitOptions& options) {
  const auto grid = threshold_grid(data.covariates(), options.grid_lo, options.grid_hi);
  LearnResult result;
  WeightFn w = WeightFn::uniform();
  try {
    const KernelDensity density(first_coordinates(data));
    LocalCurvatureOptions lopts;
    lopts.t_grid = options.t_grid;
    lopts.derivative_step = options.derivative_step;
    auto local = weight_local_curvature(theta_sharp, Population(data.covariates()), nuisances,
                                        [&density](double x) { return density(x); }, lopts);
    w = local.weight;
    result.t_selected = local.t;
    result.t_by_fold.push_back(local.t);
  } catch (const CurvatureDegenerateError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  } catch (const DegenerateWeightError& e) {
    ++result.weight_fallbacks;
    result.warnings.emplace_back(e.what());
  }
  result.theta_hat = learn_threshold(w, data, nuisances, grid).theta;
  return result;
}

RegretEvaluator::RegretEvaluator(const Covariates& test, const NuisanceSet& truth, const WeightFn& w_star) {
  require_binary(truth);
  truth.require_mu();
  const Index n = test.rows();
  if (n < 1) throw InvalidDataError("empty test sample");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return test(a, 0) < test(b, 0); });
  sorted_x_.resize(order.size());
  contrast_.resize(order.size());
  suffix_.assign(order.size() + 1, 0.0);
  std::vector<double> control(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto x = row(test, order[k]);
    sorted_x_[k] = x(0);
    const double ws = w_star(x);
    control[k] = ws * truth.mu(-1, x);
    contrast_[k] = ws * truth.mu(1, x) - control[k];
  }
  for (std::size_t k = order.size(); k-- > 0;) suffix_[k] = suffix_[k + 1] + contrast_[k];
  base_ = compensated_sum(control);
  std::size_t best = 0;
  for (std::size_t k = 1; k <= order.size(); ++k) {
    // Only cuts between distinct values are realizable by a threshold.
    if (k < order.size() && sorted_x_[k] == sorted_x_[k - 1]) continue;
    if (suffix_[k] > suffix_[best]) best = k;
  }
  best_theta_ = best == 0 ? sorted_x_.front() - 1.0 : sorted_x_[best - 1];
  best_value_ = value(best_theta_);
}

double RegretEvaluator::value(double theta) const {
  const auto k = static_cast<std::size_t>(std::upper_bound(sorted_x_.begin(), sorted_x_.end(), theta) -
                                          sorted_x_.begin());
  return (base_ + suffix_[k]) / static_cast<double>(sorted_x_.size());
}

Regret RegretEvaluator::regret(double theta_hat) const {
  Regret r;
  r.best_theta = best_theta_;
  r.value = best_value_ - value(theta_hat);
  const double lo = std::min(theta_hat, best_theta_);
  const double hi = std::max(theta_hat, best_theta_);
  const double sign = best_theta_ < theta_hat ? 1.0 : -1.0;
  std::vector<double> diff(sorted_x_.size(), 0.0);
  for (std::size_t k = 0; k < sorted_x_.size(); ++k) {
    if (sorted_x_[k] > lo && sorted_x_[k] <= hi) diff[k] = sign * contrast_[k];
  }
  r.se = std::sqrt(order_free_variance(std::move(diff)) / static_cast<double>(sorted_x_.size()));
  return r;
}

Regret regret_eval(const ThresholdPolicy& pi, const Covariates& test, const NuisanceSet& truth,
                   const WeightFn& w_star) {
  return RegretEvaluator(test, truth, w_star).regret(pi.theta());
}

}  // namespace covshift
