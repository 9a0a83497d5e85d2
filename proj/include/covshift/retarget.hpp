#pragma once

// Retargeting weights: the variance objective Omega(w, rho), its optimal
// reference policy, weights optimal under L1(nu), global-curvature and
// local-curvature constraints, and curvature/regret diagnostics for
// threshold policy classes.

#include "covshift/core.hpp"

#include <functional>
#include <limits>
#include <vector>

namespace covshift {

/// Lower clip applied to sigma^2 and phi inside sigma^2 / phi ratios.
inline constexpr double kRatioFloor = 1e-6;

using Density = std::function<double(double)>;

/// Inner bracket of Omega evaluated at the optimal reference policy.
struct OmegaIntegrandParts {
  double g = 0.0;             ///< integrand value at rho_star, >= 0
  Eigen::VectorXd rho_star;   ///< optimal reference probabilities, ordered as nuisances.actions
  double xi = 0.0;            ///< (m - 2) / sum_a phi / sigma^2
  bool rho_in_range = true;   ///< false when some rho_star entry leaves [0, 1]
};

/// Per-action variance ratios sigma^2(a, x) / phi(a | x), clipped below.
Eigen::VectorXd variance_ratios(const NuisanceSet& nuisances, CovRef x, ClipStats* clips = nullptr);

OmegaIntegrandParts integrand_parts(const NuisanceSet& nuisances, CovRef x, ClipStats* clips = nullptr);

/// rho(a|x) = (1 - xi(x) phi(a|x) / sigma^2(a, x)) / 2. Entries sum to one;
/// they may leave [0, 1] for m >= 3 (reported, not clipped).
Eigen::VectorXd optimal_reference(const NuisanceSet& nuisances, CovRef x, ClipStats* clips = nullptr);
PolicyPtr optimal_reference_policy(const NuisanceSet& nuisances);

/// sum_a r_a rho_a^2 + max_a r_a (1 - 2 rho_a) with r_a = sigma^2 / phi.
double omega_integrand(const Policy& rho, const NuisanceSet& nuisances, CovRef x, ClipStats* clips = nullptr);

/// Omega(w, rho) = E_pop[w(X)^2 * integrand(X)].
double omega(const WeightFn& w, const Policy& rho, const Population& pop, const NuisanceSet& nuisances,
             ClipStats* clips = nullptr);

/// Minimizer of Omega(., rho_star) subject to E_nu[w] = 1, given dnu/dP on
/// the population points: w(x) proportional to (dnu/dP)(x) / g(x).
WeightFn weight_l1(const Population& pop, const NuisanceSet& nuisances,
                   const std::function<double(CovRef)>& nu_density_ratio, ClipStats* clips = nullptr);
/// Discrete nu on (a subset of) the support of a discrete population.
WeightFn weight_l1(const DiscretizedDistribution& pop, const NuisanceSet& nuisances,
                   const DiscretizedDistribution& nu, ClipStats* clips = nullptr);

/// weight_l1 with nu equal to the population itself.
WeightFn weight_retargeting(const Population& pop, const NuisanceSet& nuisances, ClipStats* clips = nullptr);

/// Minimizer of Omega subject to E_{nu1}[w] = 1 where dnu1/dP is
/// proportional to M(x): w(x) proportional to M(x) / g(x).
WeightFn weight_global_curvature(const Population& pop, const NuisanceSet& nuisances,
                                 ClipStats* clips = nullptr);

/// V''(theta; w) = w(theta) p(theta) [-C'(theta)] for pi_theta(1|x) = 1{x > theta},
/// with C' the least-squares slope of C over [theta - h, theta + h]. Scalar covariates only.
double curvature_vpp_threshold(double theta, const WeightFn& w, const Density& density,
                               const NuisanceSet& nuisances, double step);

struct LocalCurvatureOptions {
  std::vector<double> t_grid = linspace(0.0, 1.0, 101);
  /// Half-width of the window for C'; <= 0 means 1e-4 times the population range.
  double derivative_step = 0.0;
};

struct LocalCurvatureResult {
  WeightFn weight;                 ///< selected w_t rescaled so V''(theta; w) = -1
  double t = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objective;   ///< Omega of the rescaled w_t per grid point; NaN when skipped
  std::size_t skipped = 0;         ///< grid points with V''(theta; w_t) >= 0
};

/// Minimizes Omega(w_t, rho_star) over w_t proportional to (1 - t) w0 + t,
/// each rescaled to V''(theta; w_t) = -1; ties go to the larger t.
LocalCurvatureResult weight_local_curvature(double theta_sharp, const Population& pop,
                                            const NuisanceSet& nuisances, const Density& density,
                                            const LocalCurvatureOptions& options = {});
/// Per-t curvature locations theta(t), e.g. estimates refit under each w_t.
LocalCurvatureResult weight_local_curvature(const std::function<double(double)>& theta_of_t,
                                            const Population& pop, const NuisanceSet& nuisances,
                                            const Density& density, const LocalCurvatureOptions& options = {});

/// Regret transfer bound [esssup w*/w] * regret_w over the population points.
struct RegretBound {
  double value = 0.0;
  bool unbounded = false;  ///< w = 0 where w* > 0; value is +inf
};
RegretBound regret_bound_esssup(const WeightFn& w, const WeightFn& w_star, double regret_w, const Population& pop);

/// Leading-order regret ratio V''(theta; w*) / V''(theta; w).
double regret_ratio_firstorder(double theta_sharp, const WeightFn& w, const WeightFn& w_star,
                               const Density& density, const NuisanceSet& nuisances, double step);

struct CurvatureReport {
  double theta_sharp = 0.0;
  double vpp_w = 0.0;
  double vpp_w_star = 0.0;
  double regret_ratio_estimate = 0.0;
  double esssup_bound = 0.0;   ///< esssup w*/w, i.e. the bound per unit of w-regret
  bool concave = true;         ///< both second derivatives <= 0
};
CurvatureReport curvature_report(double theta_sharp, const WeightFn& w, const WeightFn& w_star,
                                 const Density& density, const NuisanceSet& nuisances, const Population& pop,
                                 double step);

}  // namespace covshift
