#pragma once

// L^k-ball uncertainty sets around a discrete covariate law: membership,
// minimal radius, worst-case means over the ball, robust threshold learning
// and radius selection by estimated value.

#include "covshift/core.hpp"
#include "covshift/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

namespace covshift {

inline constexpr double kInfinityOrder = std::numeric_limits<double>::infinity();

/// {q << center : ||dq/dcenter||_{L^k(center)} <= c}.
struct UncertaintySet {
  DiscretizedDistribution center;
  double k = 2.0;
  double c = 1.0;

  UncertaintySet(DiscretizedDistribution center_, double k_, double c_);
};

/// Candidate radii used when none are given.
inline const std::vector<double>& default_radius_grid() {
  static const std::vector<double> grid{1.0, 1.2, 1.5, 2.0, 3.0, 5.0};
  return grid;
}

void check_order(double k);

/// (sum_i p_i (q_i / p_i)^k)^(1/k), or max_i q_i / p_i for k = inf, on a
/// shared support given as aligned mass vectors.
template <typename DerivedQ, typename DerivedP>
typename DerivedQ::Scalar lk_norm(const Eigen::MatrixBase<DerivedQ>& q, const Eigen::MatrixBase<DerivedP>& p,
                                  double k) {
  using Scalar = typename DerivedQ::Scalar;
  check_order(k);
  if (q.size() != p.size()) throw ConfigurationError("q and p have different supports");
  Scalar acc(0);
  for (Index i = 0; i < q.size(); ++i) {
    if (q(i) < Scalar(0) || p(i) < Scalar(0)) throw InvalidDataError("negative mass");
    if (p(i) == Scalar(0)) {
      if (q(i) > Scalar(0)) throw AbsoluteContinuityError("q charges a point where p has no mass");
      continue;
    }
    const Scalar r = q(i) / p(i);
    if (std::isinf(k)) {
      acc = std::max(acc, r);
    } else {
      acc += p(i) * std::pow(r, Scalar(k));
    }
  }
  return std::isinf(k) ? acc : std::pow(acc, Scalar(1.0 / k));
}

/// Norm between two discrete laws; q's points are matched to p's support.
double lk_norm(const DiscretizedDistribution& q, const DiscretizedDistribution& p, double k);

/// Smallest radius whose ball around p contains p_star.
double minimal_c(const DiscretizedDistribution& p_star, const DiscretizedDistribution& p, double k);

template <typename Scalar>
struct WorstCase {
  Scalar value;
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> q;
};

/// min_q sum_i q_i v_i over the L^k(p) ball of radius c. Exact greedy capping
/// for k = inf; for finite k the minimizer has density ratio proportional to
/// (alpha - v_i)_+^(1/(k-1)) and alpha is found by bisection.
template <typename DerivedV, typename DerivedP>
WorstCase<typename DerivedV::Scalar> worst_case_mean(const Eigen::MatrixBase<DerivedV>& v,
                                                     const Eigen::MatrixBase<DerivedP>& p, double k, double c) {
  using Scalar = typename DerivedV::Scalar;
  using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  check_order(k);
  if (!(c >= 1.0)) throw RadiusError("radius must be at least 1");
  if (v.size() != p.size() || v.size() == 0) throw ConfigurationError("values and center sizes differ");
  if (!v.allFinite()) throw InvalidDataError("values must be finite");
  const Index n = v.size();
  const Vec pv = p;
  const Vec vv = v;

  if (c == 1.0) return {pv.dot(vv), pv};

  Vec q = Vec::Zero(n);
  if (std::isinf(k)) {
    std::vector<Index> order;
    for (Index i = 0; i < n; ++i) {
      if (pv(i) > Scalar(0)) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return vv(a) < vv(b); });
    Scalar left(1);
    for (Index i : order) {
      const Scalar take = std::min(left, Scalar(c) * pv(i));
      q(i) = take;
      left -= take;
      if (left <= Scalar(0)) break;
    }
    return {q.dot(vv), q};
  }

  Scalar vmin = std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < n; ++i) {
    if (pv(i) > Scalar(0)) vmin = std::min(vmin, vv(i));
  }
  // Concentrating all mass on the minimizers of v is optimal when it fits.
  Scalar argmin_mass(0);
  for (Index i = 0; i < n; ++i) {
    if (pv(i) > Scalar(0) && vv(i) == vmin) argmin_mass += pv(i);
  }
  if (std::pow(argmin_mass, Scalar(1.0 / k - 1.0)) <= Scalar(c)) {
    for (Index i = 0; i < n; ++i) {
      if (pv(i) > Scalar(0) && vv(i) == vmin) q(i) = pv(i) / argmin_mass;
    }
    return {vmin, q};
  }

  const Scalar expo = Scalar(1.0 / (k - 1.0));
  auto ratio_at = [&](Scalar alpha) {
    Vec r(n);
    for (Index i = 0; i < n; ++i) {
      r(i) = pv(i) > Scalar(0) && alpha > vv(i) ? std::pow(alpha - vv(i), expo) : Scalar(0);
    }
    const Scalar z = pv.dot(r);
    return Vec(r / z);
  };
  auto norm_at = [&](Scalar alpha) { return lk_norm(ratio_at(alpha).cwiseProduct(pv), pv, k); };

  const Scalar span = std::max(vv.maxCoeff() - vmin, Scalar(1e-300));
  Scalar lo = vmin;
  Scalar hi = vmin + span;
  while (norm_at(hi) > Scalar(c)) {
    lo = hi;
    hi = vmin + 2 * (hi - vmin);
  }
  // Norm decreases in alpha; keep hi on the feasible side.
  while (hi - lo > Scalar(1e-10) * span) {
    const Scalar mid = 0.5 * (lo + hi);
    if (norm_at(mid) > Scalar(c)) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  q = ratio_at(hi).cwiseProduct(pv);
  return {q.dot(vv), q};
}

struct WorstCaseResult {
  double value = 0.0;
  DiscretizedDistribution q_worst;
};
WorstCaseResult worst_case_mean(const Eigen::VectorXd& v, const UncertaintySet& set);

struct DroThresholdResult {
  double theta = 0.0;
  double worst_case_value = 0.0;
  std::vector<double> objective;  ///< worst-case value per grid point
};

/// argmax over the grid of the worst-case mean of (2 pi_theta(1|x) - 1) cate(x)
/// with the empirical law of `center_sample` as center; ties to the smallest theta.
DroThresholdResult dro_learn_threshold(const std::vector<double>& theta_grid,
                                       const std::function<double(CovRef)>& cate, const Covariates& center_sample,
                                       double k, double c);

/// argmax over c of the estimated value of policies[c]; ties to the smaller c.
double select_c_calibrated(const std::map<double, PolicyPtr>& policies, const LabeledDataset& data,
                           const NuisanceSet& nuisances, EstimatorTag tag);

/// argmax over c of the minimum over calibration sites of the covariates-only
/// value estimate. `fitter` builds nuisances on training rows plus one site.
double select_c_multisite(const std::map<double, PolicyPtr>& policies, const LabeledDataset& training,
                          const std::vector<Covariates>& sites, const NuisanceFitter& fitter);

/// Caller-supplied rule turning a calibration sample into a radius, e.g. from
/// a confidence set for the testing law. No rule ships with the library.
using RadiusRule = std::function<double(const DiscretizedDistribution& center, const Covariates& calibration)>;

/// Points on the boundary of the ball around a 3-point center, traced by
/// rays from the center at `points` equally spaced angles in the simplex plane.
/// Each row is (q1, q2, q3).
Eigen::MatrixXd uncertainty_set_boundary(const Eigen::Vector3d& center, double k, double c, std::size_t points = 360);

}  // namespace covshift
