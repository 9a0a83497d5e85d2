#include "covshift/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace covshift {

namespace {

bool rows_less(const Covariates& x, Index a, Index b) {
  for (Index j = 0; j < x.cols(); ++j) {
    if (x(a, j) != x(b, j)) return x(a, j) < x(b, j);
  }
  return false;
}

bool rows_equal(const Covariates& x, Index a, Index b) { return (x.row(a).array() == x.row(b).array()).all(); }

std::vector<Index> lexicographic_order(const Covariates& x) {
  std::vector<Index> order(static_cast<std::size_t>(x.rows()));
  std::iota(order.begin(), order.end(), Index{0});
  std::sort(order.begin(), order.end(), [&](Index a, Index b) { return rows_less(x, a, b); });
  return order;
}

}  // namespace

LabeledDataset::LabeledDataset(Covariates covariates, Eigen::VectorXi actions, Eigen::VectorXd outcomes,
                               std::vector<bool> observed, Eigen::VectorXi site,
                               std::vector<int> action_set)
    : covariates_(std::move(covariates)),
      actions_(std::move(actions)),
      outcomes_(std::move(outcomes)),
      observed_(std::move(observed)),
      site_(std::move(site)),
      action_set_(std::move(action_set)) {
  const Index n = covariates_.rows();
  if (n < 1) throw InvalidDataError("dataset must have at least one row");
  if (actions_.size() != n || outcomes_.size() != n || site_.size() != n ||
      static_cast<Index>(observed_.size()) != n) {
    throw InvalidDataError("column lengths disagree with the number of covariate rows");
  }
  if (action_set_.size() < 2) throw InvalidDataError("action set needs at least two actions");
  for (Index i = 0; i < n; ++i) {
    const int s = site_(i);
    if (s != kTrainingSite && s != kCalibrationSite) throw InvalidDataError("site must be 0 or 1");
    if (s == kTrainingSite && !observed_[static_cast<std::size_t>(i)]) {
      throw InvalidDataError("training rows must carry both action and outcome");
    }
    if (observed_[static_cast<std::size_t>(i)]) {
      if (std::find(action_set_.begin(), action_set_.end(), actions_(i)) == action_set_.end()) {
        throw InvalidDataError("action " + std::to_string(actions_(i)) + " is not in the action set");
      }
      if (!std::isfinite(outcomes_(i))) throw InvalidDataError("observed outcome is not finite");
    }
  }
}

LabeledDataset LabeledDataset::training_only(Covariates covariates, Eigen::VectorXi actions,
                                             Eigen::VectorXd outcomes, std::vector<int> action_set) {
  const Index n = covariates.rows();
  return LabeledDataset(std::move(covariates), std::move(actions), std::move(outcomes),
                        std::vector<bool>(static_cast<std::size_t>(n), true),
                        Eigen::VectorXi::Constant(n, kTrainingSite), std::move(action_set));
}

std::vector<Index> LabeledDataset::rows_with_site(int s) const {
  std::vector<Index> out;
  for (Index i = 0; i < n(); ++i) {
    if (site_(i) == s) out.push_back(i);
  }
  return out;
}

std::size_t LabeledDataset::count_site(int s) const {
  return static_cast<std::size_t>((site_.array() == s).count());
}

LabeledDataset LabeledDataset::subset(std::span<const Index> rows) const {
  const auto m = static_cast<Index>(rows.size());
  Covariates x(m, p());
  Eigen::VectorXi a(m), s(m);
  Eigen::VectorXd y(m);
  std::vector<bool> obs(rows.size());
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    x.row(k) = covariates_.row(i);
    a(k) = actions_(i);
    y(k) = outcomes_(i);
    s(k) = site_(i);
    obs[static_cast<std::size_t>(k)] = observed_[static_cast<std::size_t>(i)];
  }
  return LabeledDataset(std::move(x), std::move(a), std::move(y), std::move(obs), std::move(s), action_set_);
}

LabeledDataset LabeledDataset::without_calibration_outcomes() const {
  std::vector<bool> obs = observed_;
  Eigen::VectorXi a = actions_;
  Eigen::VectorXd y = outcomes_;
  for (Index i = 0; i < n(); ++i) {
    if (site_(i) == kCalibrationSite) {
      obs[static_cast<std::size_t>(i)] = false;
      a(i) = 0;
      y(i) = 0.0;
    }
  }
  return LabeledDataset(covariates_, std::move(a), std::move(y), std::move(obs), site_, action_set_);
}

Covariates LabeledDataset::covariates_of_site(int s) const {
  const auto rows = rows_with_site(s);
  Covariates out(static_cast<Index>(rows.size()), p());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Index>(k)) = covariates_.row(rows[k]);
  return out;
}

DiscretizedDistribution::DiscretizedDistribution(Covariates support, Eigen::VectorXd mass)
    : support_(std::move(support)), mass_(std::move(mass)) {
  if (support_.rows() < 1) throw InvalidDataError("distribution needs at least one support point");
  if (mass_.size() != support_.rows()) throw InvalidDataError("mass and support sizes differ");
  if ((mass_.array() < 0.0).any()) throw InvalidDataError("masses must be nonnegative");
  if (std::abs(mass_.sum() - 1.0) > 1e-12) throw InvalidDataError("masses must sum to one");
  const auto order = lexicographic_order(support_);
  for (std::size_t k = 1; k < order.size(); ++k) {
    if (rows_equal(support_, order[k - 1], order[k])) throw InvalidDataError("support points must be distinct");
  }
}

namespace {
Covariates column_of(const std::vector<double>& v) {
  Covariates x(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) x(static_cast<Index>(i), 0) = v[i];
  return x;
}
}  // namespace

DiscretizedDistribution::DiscretizedDistribution(const std::vector<double>& support,
                                                 const std::vector<double>& mass)
    : DiscretizedDistribution(column_of(support),
                              Eigen::Map<const Eigen::VectorXd>(mass.data(), static_cast<Index>(mass.size()))) {}

DiscretizedDistribution DiscretizedDistribution::uniform(Covariates support) {
  const Index k = support.rows();
  Eigen::VectorXd mass = Eigen::VectorXd::Constant(k, 1.0 / static_cast<double>(k));
  if (k > 0) mass(k - 1) = 1.0 - mass.head(k - 1).sum();
  return DiscretizedDistribution(std::move(support), std::move(mass));
}

DiscretizedDistribution DiscretizedDistribution::empirical(const Covariates& sample) {
  const auto order = lexicographic_order(sample);
  std::vector<Index> reps;
  std::vector<double> counts;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k > 0 && rows_equal(sample, order[k - 1], order[k])) {
      counts.back() += 1.0;
    } else {
      reps.push_back(order[k]);
      counts.push_back(1.0);
    }
  }
  Covariates support(static_cast<Index>(reps.size()), sample.cols());
  Eigen::VectorXd mass(static_cast<Index>(reps.size()));
  const double n = static_cast<double>(sample.rows());
  for (std::size_t k = 0; k < reps.size(); ++k) {
    support.row(static_cast<Index>(k)) = sample.row(reps[k]);
    mass(static_cast<Index>(k)) = counts[k] / n;
  }
  mass /= mass.sum();
  return DiscretizedDistribution(std::move(support), std::move(mass));
}

std::optional<Index> DiscretizedDistribution::find(CovRef x) const {
  for (Index i = 0; i < size(); ++i) {
    if ((support_.row(i).transpose().array() == x.array()).all()) return i;
  }
  return std::nullopt;
}

Population::Population(const Covariates& sample)
    : points(sample), mass(Eigen::VectorXd::Constant(sample.rows(), 1.0 / static_cast<double>(sample.rows()))) {
  if (sample.rows() < 1) throw InvalidDataError("empty sample");
}

Population::Population(Covariates pts, Eigen::VectorXd masses) : points(std::move(pts)), mass(std::move(masses)) {
  if (points.rows() != mass.size() || points.rows() < 1) throw InvalidDataError("population size mismatch");
}

double Population::expect(const std::function<double(CovRef)>& f) const {
  double acc = 0.0;
  for (Index i = 0; i < size(); ++i) acc += mass(i) * f(point(i));
  return acc;
}

double Population::range() const { return points.col(0).maxCoeff() - points.col(0).minCoeff(); }

ComplementPolicy::ComplementPolicy(PolicyPtr base) : base_(std::move(base)) {
  if (!base_ || base_->actions().size() != 2) {
    throw ConfigurationError("complement policy requires a binary action set");
  }
}

ConstantPolicy::ConstantPolicy(std::vector<int> actions, std::vector<double> probs)
    : actions_(std::move(actions)), probs_(std::move(probs)) {
  if (actions_.size() != probs_.size()) throw ConfigurationError("one probability per action required");
  double total = 0.0;
  for (double q : probs_) {
    if (q < 0.0) throw ConfigurationError("negative action probability");
    total += q;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigurationError("action probabilities must sum to one");
}

ConstantPolicy ConstantPolicy::uniform(std::vector<int> actions) {
  const std::size_t m = actions.size();
  return ConstantPolicy(std::move(actions), std::vector<double>(m, 1.0 / static_cast<double>(m)));
}

double ConstantPolicy::prob(int action, CovRef) const { return probs_[action_index(actions_, action)]; }

std::size_t action_index(const std::vector<int>& actions, int action) {
  const auto it = std::find(actions.begin(), actions.end(), action);
  if (it == actions.end()) throw ConfigurationError("unknown action " + std::to_string(action));
  return static_cast<std::size_t>(it - actions.begin());
}

double NuisanceSet::conditional_effect(CovRef x) const {
  if (cate) return cate(x);
  require_mu();
  return mu(1, x) - mu(-1, x);
}

void NuisanceSet::require_mu() const {
  if (!mu) throw ConfigurationError("outcome regression mu is not populated");
}
void NuisanceSet::require_phi() const {
  if (!phi) throw ConfigurationError("propensity phi is not populated");
}
void NuisanceSet::require_sigma2() const {
  if (!sigma2) throw ConfigurationError("conditional variance sigma2 is not populated");
}

double derive_M(const NuisanceSet& nuisances, CovRef x) {
  nuisances.require_mu();
  double hi = -std::numeric_limits<double>::infinity();
  double lo = std::numeric_limits<double>::infinity();
  for (int a : nuisances.actions) {
    const double m = nuisances.mu(a, x);
    hi = std::max(hi, m);
    lo = std::min(lo, m);
  }
  return hi - lo;
}

WeightFn WeightFn::uniform() {
  return WeightFn([](CovRef) { return 1.0; }, Normalization::train, "train");
}

WeightFn WeightFn::constant(double value) {
  return WeightFn([value](CovRef) { return value; }, Normalization::unnormalized);
}

WeightFn WeightFn::scaled(double k) const {
  auto inner = fn_;
  const Normalization tag = k == 1.0 ? normalization_ : Normalization::unnormalized;
  return WeightFn([inner, k](CovRef x) { return k * (*inner)(x); }, tag, k == 1.0 ? measure_ : std::string{});
}

WeightFn normalize_weight(const WeightFn& w, const Population& nu, Normalization tag, std::string measure) {
  const double total = nu.expect([&](CovRef x) { return w(x); });
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateWeightError("weight integrates to " + std::to_string(total) + " under nu");
  }
  WeightFn out = w.scaled(1.0 / total);
  return WeightFn([out](CovRef x) { return out(x); }, tag, std::move(measure));
}

bool is_normalized(const WeightFn& w, const Population& nu, double tol) {
  for (Index i = 0; i < nu.size(); ++i) {
    if (nu.mass(i) > 0.0 && w(nu.point(i)) < 0.0) return false;
  }
  return std::abs(nu.expect([&](CovRef x) { return w(x); }) - 1.0) <= tol;
}

}  // namespace covshift
