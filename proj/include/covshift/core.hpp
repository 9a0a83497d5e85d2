#pragma once

// Domain types shared by every module: datasets, covariate distributions,
// policies, nuisance bundles and weight functions.

#include "covshift/errors.hpp"
#include "covshift/numeric.hpp"

#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace covshift {

/// Site flag: 1 marks the training sample, 0 the calibration sample.
inline constexpr int kTrainingSite = 1;
inline constexpr int kCalibrationSite = 0;

/// Binary action set used throughout the threshold-policy machinery.
inline const std::vector<int>& binary_actions() {
  static const std::vector<int> actions{-1, 1};
  return actions;
}

/// Rows (X, A, Y, S) with a joint missingness mask on (A, Y).
///
/// Invariants enforced at construction: n >= 1; A and Y are missing together;
/// every training row (S = 1) has (A, Y); present actions belong to the
/// action set. Immutable after construction.
class LabeledDataset {
 public:
  LabeledDataset(Covariates covariates, Eigen::VectorXi actions, Eigen::VectorXd outcomes,
                 std::vector<bool> observed, Eigen::VectorXi site,
                 std::vector<int> action_set = binary_actions());

  /// All rows observed and in the training site.
  static LabeledDataset training_only(Covariates covariates, Eigen::VectorXi actions,
                                      Eigen::VectorXd outcomes,
                                      std::vector<int> action_set = binary_actions());

  Index n() const { return covariates_.rows(); }
  Index p() const { return covariates_.cols(); }
  const Covariates& covariates() const { return covariates_; }
  auto x(Index i) const { return row(covariates_, i); }
  bool observed(Index i) const { return observed_[static_cast<std::size_t>(i)]; }
  int action(Index i) const { return actions_(i); }
  double outcome(Index i) const { return outcomes_(i); }
  int site(Index i) const { return site_(i); }
  const std::vector<int>& action_set() const { return action_set_; }
  const Eigen::VectorXi& actions() const { return actions_; }
  const Eigen::VectorXd& outcomes() const { return outcomes_; }
  const Eigen::VectorXi& sites() const { return site_; }

  std::vector<Index> rows_with_site(int s) const;
  std::size_t count_site(int s) const;
  bool has_site(int s) const { return count_site(s) > 0; }

  LabeledDataset subset(std::span<const Index> rows) const;
  /// Same rows with (A, Y) removed wherever S = 0.
  LabeledDataset without_calibration_outcomes() const;
  /// Covariate rows with the given site flag.
  Covariates covariates_of_site(int s) const;

 private:
  Covariates covariates_;
  Eigen::VectorXi actions_;
  Eigen::VectorXd outcomes_;
  std::vector<bool> observed_;
  Eigen::VectorXi site_;
  std::vector<int> action_set_;
};

/// Probability masses on a finite set of distinct covariate points.
class DiscretizedDistribution {
 public:
  DiscretizedDistribution(Covariates support, Eigen::VectorXd mass);
  /// Scalar-covariate convenience constructor.
  DiscretizedDistribution(const std::vector<double>& support, const std::vector<double>& mass);
  DiscretizedDistribution(std::initializer_list<double> support, std::initializer_list<double> mass)
      : DiscretizedDistribution(std::vector<double>(support), std::vector<double>(mass)) {}

  /// Uniform over the given distinct points.
  static DiscretizedDistribution uniform(Covariates support);
  /// Empirical law of a sample; duplicate rows are merged.
  static DiscretizedDistribution empirical(const Covariates& sample);

  Index size() const { return support_.rows(); }
  const Covariates& support() const { return support_; }
  const Eigen::VectorXd& mass() const { return mass_; }
  auto point(Index i) const { return row(support_, i); }
  /// Index of the support point equal to x, if any.
  std::optional<Index> find(CovRef x) const;

 private:
  Covariates support_;
  Eigen::VectorXd mass_;
};

/// Weighted point set over which expectations are taken: either the exact
/// masses of a DiscretizedDistribution or the 1/n masses of an iid sample.
/// Unlike DiscretizedDistribution, points may repeat.
struct Population {
  Covariates points;
  Eigen::VectorXd mass;

  Population(const DiscretizedDistribution& d) : points(d.support()), mass(d.mass()) {}  // NOLINT
  Population(const Covariates& sample);                                                   // NOLINT
  Population(Covariates pts, Eigen::VectorXd masses);

  Index size() const { return points.rows(); }
  auto point(Index i) const { return row(points, i); }
  double expect(const std::function<double(CovRef)>& f) const;
  /// First-coordinate range of the points (max - min).
  double range() const;
};

/// Stochastic map x -> distribution over a finite action set.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual const std::vector<int>& actions() const = 0;
  virtual double prob(int action, CovRef x) const = 0;
};
using PolicyPtr = std::shared_ptr<const Policy>;

/// pi_theta(1|x) = 1{x_1 > theta} on the binary action set.
class ThresholdPolicy final : public Policy {
 public:
  explicit ThresholdPolicy(double theta) : theta_(theta) {}
  const std::vector<int>& actions() const override { return binary_actions(); }
  double prob(int action, CovRef x) const override {
    const bool treat = x(0) > theta_;
    return (action == 1) == treat ? 1.0 : 0.0;
  }
  double theta() const { return theta_; }

 private:
  double theta_;
};

/// pi_bar(a|x) = 1 - pi(a|x); defined for binary action sets only.
class ComplementPolicy final : public Policy {
 public:
  explicit ComplementPolicy(PolicyPtr base);
  const std::vector<int>& actions() const override { return base_->actions(); }
  double prob(int action, CovRef x) const override { return 1.0 - base_->prob(action, x); }

 private:
  PolicyPtr base_;
};

/// Deterministic rule x -> action.
class RulePolicy final : public Policy {
 public:
  RulePolicy(std::function<int(CovRef)> rule, std::vector<int> actions = binary_actions())
      : rule_(std::move(rule)), actions_(std::move(actions)) {}
  const std::vector<int>& actions() const override { return actions_; }
  double prob(int action, CovRef x) const override { return rule_(x) == action ? 1.0 : 0.0; }

 private:
  std::function<int(CovRef)> rule_;
  std::vector<int> actions_;
};

/// Policy given by an arbitrary probability function.
class FunctionPolicy final : public Policy {
 public:
  FunctionPolicy(std::function<double(int, CovRef)> prob, std::vector<int> actions = binary_actions())
      : prob_(std::move(prob)), actions_(std::move(actions)) {}
  const std::vector<int>& actions() const override { return actions_; }
  double prob(int action, CovRef x) const override { return prob_(action, x); }

 private:
  std::function<double(int, CovRef)> prob_;
  std::vector<int> actions_;
};

/// The same distribution over actions at every x.
class ConstantPolicy final : public Policy {
 public:
  ConstantPolicy(std::vector<int> actions, std::vector<double> probs);
  static ConstantPolicy uniform(std::vector<int> actions = binary_actions());
  const std::vector<int>& actions() const override { return actions_; }
  double prob(int action, CovRef x) const override;

 private:
  std::vector<int> actions_;
  std::vector<double> probs_;
};

/// Position of `action` in `actions`; throws if absent.
std::size_t action_index(const std::vector<int>& actions, int action);

/// Fitted (or true) nuisance functions. Any member may be empty; operations
/// that need an empty member throw ConfigurationError.
struct NuisanceSet {
  using ArmFn = std::function<double(int, CovRef)>;
  using SiteArmFn = std::function<double(int, CovRef, int)>;
  using CovFn = std::function<double(CovRef)>;

  std::vector<int> actions = binary_actions();
  ArmFn mu;         ///< E[Y | A = a, X = x]
  SiteArmFn phi;    ///< P(A = a | X = x, S = s)
  ArmFn sigma2;     ///< Var(Y | A = a, X = x)
  CovFn sel;        ///< P(S = 1 | X = x)
  CovFn w_star;     ///< dP*_X / dP_X
  CovFn cate;       ///< mu(1, x) - mu(-1, x); derived from mu when empty

  double conditional_effect(CovRef x) const;
  void require_mu() const;
  void require_phi() const;
  void require_sigma2() const;
};

/// M(x) = max_a mu(a, x) - min_a mu(a, x).
double derive_M(const NuisanceSet& nuisances, CovRef x);

enum class Normalization { train, custom, unnormalized };

/// Nonnegative weight function of x with a declared normalization measure.
class WeightFn {
 public:
  WeightFn(std::function<double(CovRef)> fn, Normalization normalization = Normalization::unnormalized,
           std::string measure = {})
      : fn_(std::make_shared<std::function<double(CovRef)>>(std::move(fn))),
        normalization_(normalization),
        measure_(std::move(measure)) {}

  /// w == 1, which integrates to one under the training law.
  static WeightFn uniform();
  static WeightFn constant(double value);

  double operator()(CovRef x) const { return (*fn_)(x); }
  Normalization normalization() const { return normalization_; }
  const std::string& measure() const { return measure_; }
  /// k * w, marked unnormalized unless k == 1.
  WeightFn scaled(double k) const;

 private:
  std::shared_ptr<const std::function<double(CovRef)>> fn_;
  Normalization normalization_;
  std::string measure_;
};

/// w / E_nu[w], pointwise proportional to w and integrating to one under nu.
WeightFn normalize_weight(const WeightFn& w, const Population& nu,
                          Normalization tag = Normalization::custom, std::string measure = "nu");

/// |E_nu[w] - 1| <= tol and w >= 0 on the points of nu.
bool is_normalized(const WeightFn& w, const Population& nu, double tol = 1e-8);

}  // namespace covshift
