#include "covshift/retarget.hpp"

#include <algorithm>
#include <cmath>

namespace covshift {

Eigen::VectorXd variance_ratios(const NuisanceSet& nuisances, CovRef x, ClipStats* clips) {
  nuisances.require_phi();
  nuisances.require_sigma2();
  const auto m = static_cast<Index>(nuisances.actions.size());
  Eigen::VectorXd r(m);
  for (Index k = 0; k < m; ++k) {
    const int a = nuisances.actions[static_cast<std::size_t>(k)];
    const double phi = nuisances.phi(a, x, kTrainingSite);
    if (!(phi > 0.0)) throw PositivityError("propensity is zero for action " + std::to_string(a));
    const double s2 = clip_below(nuisances.sigma2(a, x), kRatioFloor, clips);
    r(k) = s2 / clip_below(phi, kRatioFloor, clips);
  }
  return r;
}

OmegaIntegrandParts integrand_parts(const NuisanceSet& nuisances, CovRef x, ClipStats* clips) {
  const Eigen::VectorXd r = variance_ratios(nuisances, x, clips);
  const auto m = static_cast<double>(r.size());
  OmegaIntegrandParts parts;
  parts.xi = (m - 2.0) / r.cwiseInverse().sum();
  parts.rho_star = 0.5 * (1.0 - parts.xi * r.cwiseInverse().array()).matrix();
  parts.rho_in_range = (parts.rho_star.array() >= 0.0).all() && (parts.rho_star.array() <= 1.0).all();
  // At rho_star every r_a (1 - 2 rho_a) equals xi, so the max term is xi and
  // sum_a r_a rho_a^2 collapses to (sum_a r_a - (m + 2) xi) / 4.
  parts.g = 0.25 * (r.sum() + (2.0 - m) * parts.xi);
  return parts;
}

Eigen::VectorXd optimal_reference(const NuisanceSet& nuisances, CovRef x, ClipStats* clips) {
  return integrand_parts(nuisances, x, clips).rho_star;
}

PolicyPtr optimal_reference_policy(const NuisanceSet& nuisances) {
  return std::make_shared<FunctionPolicy>(
      [nuisances](int a, CovRef x) {
        return optimal_reference(nuisances, x)(static_cast<Index>(action_index(nuisances.actions, a)));
      },
      nuisances.actions);
}

double omega_integrand(const Policy& rho, const NuisanceSet& nuisances, CovRef x, ClipStats* clips) {
  const Eigen::VectorXd r = variance_ratios(nuisances, x, clips);
  double quad = 0.0;
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < nuisances.actions.size(); ++k) {
    const double q = rho.prob(nuisances.actions[k], x);
    const double rk = r(static_cast<Index>(k));
    quad += rk * q * q;
    worst = std::max(worst, rk * (1.0 - 2.0 * q));
  }
  return quad + worst;
}

double omega(const WeightFn& w, const Policy& rho, const Population& pop, const NuisanceSet& nuisances,
             ClipStats* clips) {
  double acc = 0.0;
  for (Index i = 0; i < pop.size(); ++i) {
    if (pop.mass(i) == 0.0) continue;
    const auto x = pop.point(i);
    const double wi = w(x);
    if (wi == 0.0) continue;
    acc += pop.mass(i) * wi * wi * omega_integrand(rho, nuisances, x, clips);
  }
  return acc;
}

namespace {

// w(x) = scale * numerator(x) / g(x) with scale fixing E_P[ratio * w] = 1,
// where `ratio` is the density of the normalizing measure against P.
WeightFn closed_form_weight(const Population& pop, const NuisanceSet& nuisances,
                            const std::function<double(CovRef)>& numerator,
                            const std::function<double(CovRef)>& nu_ratio, Normalization tag,
                            const std::string& measure, ClipStats* clips) {
  double total = 0.0;
  for (Index i = 0; i < pop.size(); ++i) {
    if (pop.mass(i) == 0.0) continue;
    const auto x = pop.point(i);
    const double num = numerator(x);
    const double nu = nu_ratio(x);
    if (num < 0.0 || nu < 0.0) throw ConfigurationError("weight numerator and nu density must be nonnegative");
    if (num == 0.0) continue;
    const double g = integrand_parts(nuisances, x, clips).g;
    if (!(g > 0.0)) throw UnboundedWeightError("integrand vanishes on a nu-positive point");
    total += pop.mass(i) * nu * num / g;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw DegenerateWeightError("closed-form weight has zero mass under the normalizing measure");
  }
  const double scale = 1.0 / total;
  NuisanceSet nuis = nuisances;
  return WeightFn(
      [nuis, numerator, scale](CovRef x) {
        const double num = numerator(x);
        if (num == 0.0) return 0.0;
        return scale * num / integrand_parts(nuis, x).g;
      },
      tag, measure);
}

}  // namespace

WeightFn weight_l1(const Population& pop, const NuisanceSet& nuisances,
                   const std::function<double(CovRef)>& nu_density_ratio, ClipStats* clips) {
  return closed_form_weight(pop, nuisances, nu_density_ratio, nu_density_ratio, Normalization::custom, "nu",
                            clips);
}

WeightFn weight_l1(const DiscretizedDistribution& pop, const NuisanceSet& nuisances,
                   const DiscretizedDistribution& nu, ClipStats* clips) {
  if (nu.support().cols() != pop.support().cols()) throw ConfigurationError("nu and population dimensions differ");
  for (Index j = 0; j < nu.size(); ++j) {
    if (nu.mass()(j) == 0.0) continue;
    const auto i = pop.find(nu.point(j));
    if (!i || pop.mass()(*i) == 0.0) {
      throw AbsoluteContinuityError("nu charges a point outside the population support");
    }
  }
  const DiscretizedDistribution p = pop;
  const DiscretizedDistribution v = nu;
  auto ratio = [p, v](CovRef x) {
    const auto j = v.find(x);
    const auto i = p.find(x);
    if (!j || !i) return 0.0;
    return v.mass()(*j) / p.mass()(*i);
  };
  return closed_form_weight(Population(pop), nuisances, ratio, ratio, Normalization::custom, "nu", clips);
}

WeightFn weight_retargeting(const Population& pop, const NuisanceSet& nuisances, ClipStats* clips) {
  auto one = [](CovRef) { return 1.0; };
  return closed_form_weight(pop, nuisances, one, one, Normalization::train, "train", clips);
}

WeightFn weight_global_curvature(const Population& pop, const NuisanceSet& nuisances, ClipStats* clips) {
  nuisances.require_mu();
  const double mean_m = pop.expect([&](CovRef x) { return derive_M(nuisances, x); });
  if (!(mean_m > 0.0)) throw NoSignalError("M(x) vanishes on the whole population");
  NuisanceSet nuis = nuisances;
  auto spread = [nuis](CovRef x) { return derive_M(nuis, x); };
  auto nu1 = [nuis, mean_m](CovRef x) { return derive_M(nuis, x) / mean_m; };
  // Normalizing under nu1 = M p / E[M] is E_P[M w] / E[M] = 1.
  return closed_form_weight(pop, nuisances, spread, nu1, Normalization::custom, "nu1", clips);
}

double curvature_vpp_threshold(double theta, const WeightFn& w, const Density& density,
                               const NuisanceSet& nuisances, double step) {
  if (!(step > 0.0)) throw ConfigurationError("derivative step must be positive");
  // Least-squares slope over an even grid on [theta - step, theta + step].
  constexpr int kHalf = 20;
  Eigen::VectorXd at(1), probe(1);
  at << theta;
  double num = 0.0, den = 0.0;
  for (int j = -kHalf; j <= kHalf; ++j) {
    const double u = step * static_cast<double>(j) / kHalf;
    probe << theta + u;
    num += u * nuisances.conditional_effect(probe);
    den += u * u;
  }
  const double slope = num / den;
  return w(at) * density(theta) * (-slope);
}

LocalCurvatureResult weight_local_curvature(double theta_sharp, const Population& pop,
                                            const NuisanceSet& nuisances, const Density& density,
                                            const LocalCurvatureOptions& options) {
  return weight_local_curvature([theta_sharp](double) { return theta_sharp; }, pop, nuisances, density, options);
}

LocalCurvatureResult weight_local_curvature(const std::function<double(double)>& theta_of_t,
                                            const Population& pop, const NuisanceSet& nuisances,
                                            const Density& density, const LocalCurvatureOptions& options) {
  if (pop.points.cols() != 1) throw ConfigurationError("curvature constraint needs scalar covariates");
  if (options.t_grid.empty()) throw ConfigurationError("empty t grid");
  const double step = options.derivative_step > 0.0 ? options.derivative_step : 1e-4 * std::max(pop.range(), 1e-12);

  const WeightFn w0 = weight_retargeting(pop, nuisances);
  const Index n = pop.size();
  Eigen::VectorXd g(n), base(n);
  for (Index i = 0; i < n; ++i) {
    g(i) = integrand_parts(nuisances, pop.point(i)).g;
    base(i) = w0(pop.point(i));
  }

  LocalCurvatureResult result{WeightFn::uniform(), std::numeric_limits<double>::quiet_NaN(), {}, 0};
  result.objective.assign(options.t_grid.size(), std::numeric_limits<double>::quiet_NaN());
  double best = std::numeric_limits<double>::infinity();
  double best_scale = 1.0;
  for (std::size_t k = 0; k < options.t_grid.size(); ++k) {
    const double t = options.t_grid[k];
    if (t < 0.0 || t > 1.0) throw ConfigurationError("t grid must lie in [0, 1]");
    const WeightFn wt([w0, t](CovRef x) { return (1.0 - t) * w0(x) + t; });
    const double vpp = curvature_vpp_threshold(theta_of_t(t), wt, density, nuisances, step);
    if (!(vpp < 0.0) || !std::isfinite(vpp)) {
      ++result.skipped;
      continue;
    }
    const double scale = -1.0 / vpp;
    const Eigen::ArrayXd wt_pts = (1.0 - t) * base.array() + t;
    const double obj = scale * scale * (pop.mass.array() * wt_pts.square() * g.array()).sum();
    result.objective[k] = obj;
    if (obj <= best) {
      best = obj;
      best_scale = scale;
      result.t = t;
    }
  }
  if (std::isnan(result.t)) throw CurvatureDegenerateError("V'' vanishes or is positive for every t");
  const double t = result.t;
  const double scale = best_scale;
  result.weight = WeightFn([w0, t, scale](CovRef x) { return scale * ((1.0 - t) * w0(x) + t); },
                           Normalization::custom, "vpp=-1");
  return result;
}

RegretBound regret_bound_esssup(const WeightFn& w, const WeightFn& w_star, double regret_w, const Population& pop) {
  if (regret_w < 0.0) throw ConfigurationError("regret must be nonnegative");
  double sup = 0.0;
  bool unbounded = false;
  for (Index i = 0; i < pop.size(); ++i) {
    if (pop.mass(i) == 0.0) continue;
    const double ws = w_star(pop.point(i));
    const double wi = w(pop.point(i));
    if (ws <= 0.0) continue;
    if (wi <= 0.0) {
      unbounded = true;
      continue;
    }
    sup = std::max(sup, ws / wi);
  }
  if (regret_w == 0.0) return {0.0, false};
  if (unbounded) return {std::numeric_limits<double>::infinity(), true};
  return {sup * regret_w, false};
}

double regret_ratio_firstorder(double theta_sharp, const WeightFn& w, const WeightFn& w_star,
                               const Density& density, const NuisanceSet& nuisances, double step) {
  const double denom = curvature_vpp_threshold(theta_sharp, w, density, nuisances, step);
  if (denom == 0.0 || !std::isfinite(denom)) throw CurvatureDegenerateError("V''(theta; w) is zero");
  return curvature_vpp_threshold(theta_sharp, w_star, density, nuisances, step) / denom;
}

CurvatureReport curvature_report(double theta_sharp, const WeightFn& w, const WeightFn& w_star,
                                 const Density& density, const NuisanceSet& nuisances, const Population& pop,
                                 double step) {
  CurvatureReport report;
  report.theta_sharp = theta_sharp;
  report.vpp_w = curvature_vpp_threshold(theta_sharp, w, density, nuisances, step);
  report.vpp_w_star = curvature_vpp_threshold(theta_sharp, w_star, density, nuisances, step);
  report.concave = report.vpp_w <= 0.0 && report.vpp_w_star <= 0.0;
  if (report.vpp_w == 0.0) throw CurvatureDegenerateError("V''(theta; w) is zero");
  report.regret_ratio_estimate = report.vpp_w_star / report.vpp_w;
  report.esssup_bound = regret_bound_esssup(w, w_star, 1.0, pop).value;
  return report;
}

}  // namespace covshift
