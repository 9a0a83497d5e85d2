#include "covshift/dro.hpp"

namespace covshift {

void check_order(double k) {
  if (!(k > 1.0)) throw ConfigurationError("norm order k must exceed 1");
}

UncertaintySet::UncertaintySet(DiscretizedDistribution center_, double k_, double c_)
    : center(std::move(center_)), k(k_), c(c_) {
  check_order(k);
  if (!(c >= 1.0)) throw RadiusError("radius must be at least 1");
}

namespace {

// q's masses re-indexed onto p's support.
Eigen::VectorXd aligned_masses(const DiscretizedDistribution& q, const DiscretizedDistribution& p) {
  if (q.support().cols() != p.support().cols()) throw ConfigurationError("q and p dimensions differ");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(p.size());
  for (Index j = 0; j < q.size(); ++j) {
    if (q.mass()(j) == 0.0) continue;
    const auto i = p.find(q.point(j));
    if (!i) throw AbsoluteContinuityError("q charges a point outside the support of p");
    out(*i) += q.mass()(j);
  }
  return out;
}

}  // namespace

double lk_norm(const DiscretizedDistribution& q, const DiscretizedDistribution& p, double k) {
  return lk_norm(aligned_masses(q, p), p.mass(), k);
}

double minimal_c(const DiscretizedDistribution& p_star, const DiscretizedDistribution& p, double k) {
  return lk_norm(p_star, p, k);
}

WorstCaseResult worst_case_mean(const Eigen::VectorXd& v, const UncertaintySet& set) {
  const auto wc = worst_case_mean(v, set.center.mass(), set.k, set.c);
  Eigen::VectorXd q = wc.q.cwiseMax(0.0);
  q /= q.sum();
  return {wc.value, DiscretizedDistribution(set.center.support(), q)};
}

DroThresholdResult dro_learn_threshold(const std::vector<double>& theta_grid,
                                       const std::function<double(CovRef)>& cate, const Covariates& center_sample,
                                       double k, double c) {
  if (theta_grid.empty()) throw ConfigurationError("empty theta grid");
  const Index n = center_sample.rows();
  if (n < 1) throw MissingDataError("empty covariate sample");
  Eigen::VectorXd effect(n), first(n);
  for (Index i = 0; i < n; ++i) {
    effect(i) = cate(row(center_sample, i));
    first(i) = center_sample(i, 0);
  }
  const Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  DroThresholdResult out;
  out.objective.resize(theta_grid.size());
  double best = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd v(n);
  for (std::size_t g = 0; g < theta_grid.size(); ++g) {
    const double theta = theta_grid[g];
    for (Index i = 0; i < n; ++i) v(i) = first(i) > theta ? effect(i) : -effect(i);
    const double val = worst_case_mean(v, p, k, c).value;
    out.objective[g] = val;
    if (val > best || (val == best && theta < out.theta)) {
      best = val;
      out.theta = theta;
    }
  }
  out.worst_case_value = best;
  return out;
}

double select_c_calibrated(const std::map<double, PolicyPtr>& policies, const LabeledDataset& data,
                           const NuisanceSet& nuisances, EstimatorTag tag) {
  if (policies.size() < 2) throw ConfigurationError("need at least two candidate radii");
  if (!data.has_site(kCalibrationSite)) throw MissingDataError("no calibration sample");
  double best_c = policies.begin()->first;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [c, pi] : policies) {
    const double val = estimate(tag, pi, data, nuisances).point;
    if (val > best) {
      best = val;
      best_c = c;
    }
  }
  return best_c;
}

namespace {

LabeledDataset with_site(const LabeledDataset& training, const Covariates& site) {
  const auto train_rows = training.rows_with_site(kTrainingSite);
  const auto n1 = static_cast<Index>(train_rows.size());
  const Index n = n1 + site.rows();
  Covariates x(n, training.p());
  Eigen::VectorXi a = Eigen::VectorXi::Zero(n);
  Eigen::VectorXi s = Eigen::VectorXi::Constant(n, kCalibrationSite);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
  std::vector<bool> obs(static_cast<std::size_t>(n), false);
  for (Index k = 0; k < n1; ++k) {
    const Index i = train_rows[static_cast<std::size_t>(k)];
    x.row(k) = training.covariates().row(i);
    a(k) = training.action(i);
    y(k) = training.outcome(i);
    s(k) = kTrainingSite;
    obs[static_cast<std::size_t>(k)] = true;
  }
  x.bottomRows(site.rows()) = site;
  return LabeledDataset(std::move(x), std::move(a), std::move(y), std::move(obs), std::move(s),
                        training.action_set());
}

}  // namespace

double select_c_multisite(const std::map<double, PolicyPtr>& policies, const LabeledDataset& training,
                          const std::vector<Covariates>& sites, const NuisanceFitter& fitter) {
  if (policies.empty()) throw ConfigurationError("no candidate radii");
  if (sites.empty()) throw MissingDataError("need at least one calibration site");
  std::vector<LabeledDataset> pooled;
  std::vector<NuisanceSet> nuis;
  for (const auto& site : sites) {
    pooled.push_back(with_site(training, site));
    nuis.push_back(fitter(pooled.back()));
  }
  double best_c = policies.begin()->first;
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& [c, pi] : policies) {
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l < sites.size(); ++l) worst = std::min(worst, value_onlyx(*pi, pooled[l], nuis[l]).point);
    if (worst > best) {
      best = worst;
      best_c = c;
    }
  }
  return best_c;
}

Eigen::MatrixXd uncertainty_set_boundary(const Eigen::Vector3d& center, double k, double c, std::size_t points) {
  check_order(k);
  if (!(c >= 1.0)) throw RadiusError("radius must be at least 1");
  if ((center.array() <= 0.0).any() || std::abs(center.sum() - 1.0) > 1e-12) {
    throw InvalidDataError("center must be a strictly positive probability vector");
  }
  const Eigen::Vector3d e1 = Eigen::Vector3d(1.0, -1.0, 0.0).normalized();
  const Eigen::Vector3d e2 = Eigen::Vector3d(1.0, 1.0, -2.0).normalized();
  Eigen::MatrixXd out(static_cast<Index>(points), 3);
  for (std::size_t j = 0; j < points; ++j) {
    const double angle = 2.0 * M_PI * static_cast<double>(j) / static_cast<double>(points);
    const Eigen::Vector3d dir = std::cos(angle) * e1 + std::sin(angle) * e2;
    // Largest step keeping q in the simplex.
    double smax = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i) {
      if (dir(i) < 0.0) smax = std::min(smax, -center(i) / dir(i));
    }
    double lo = 0.0;
    double hi = smax;
    const Eigen::Vector3d edge = (center + smax * dir).cwiseMax(0.0);
    if (lk_norm(edge, center, k) > c) {
      for (int it = 0; it < 200 && hi - lo > 1e-14; ++it) {
        const double mid = 0.5 * (lo + hi);
        const Eigen::Vector3d q = (center + mid * dir).cwiseMax(0.0);
        (lk_norm(q, center, k) > c ? hi : lo) = mid;
      }
    } else {
      lo = smax;
    }
    out.row(static_cast<Index>(j)) = (center + lo * dir).cwiseMax(0.0).transpose();
  }
  return out;
}

}  // namespace covshift
