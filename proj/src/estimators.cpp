#include "covshift/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace covshift {

std::string to_string(EstimatorTag tag) {
  switch (tag) {
    case EstimatorTag::ipw: return "ipw";
    case EstimatorTag::aipw: return "aipw";
    case EstimatorTag::eff: return "eff";
    case EstimatorTag::onlyx: return "onlyx";
    case EstimatorTag::plugin: return "plugin";
  }
  return "unknown";
}

EstimatorTag parse_estimator(const std::string& name) {
  for (auto t : {EstimatorTag::ipw, EstimatorTag::aipw, EstimatorTag::eff, EstimatorTag::onlyx, EstimatorTag::plugin}) {
    if (to_string(t) == name) return t;
  }
  throw ConfigurationError("unknown estimator '" + name + "'");
}

MuSource parse_mu_source(const std::string& name) {
  if (name == "train") return MuSource::train;
  if (name == "calib") return MuSource::calib;
  if (name == "pooled") return MuSource::pooled;
  throw ConfigurationError("unknown mu source '" + name + "'");
}

double clipped_propensity(const NuisanceSet& nuisances, int action, CovRef x, int site, ClipStats* clips) {
  nuisances.require_phi();
  return clip(nuisances.phi(action, x, site), kPropensityLow, kPropensityHigh, clips);
}

DensityRatioFit fit_density_ratio(const LabeledDataset& data, const LogisticOptions& options) {
  const std::size_t n1 = data.count_site(kTrainingSite);
  const std::size_t n0 = data.count_site(kCalibrationSite);
  if (n1 == 0 || n0 == 0) throw IdentificationError("density ratio needs rows from both sites");
  Eigen::VectorXi label = (data.sites().array() == kTrainingSite).cast<int>();
  const FittedRegression model = fit_logistic(data.covariates(), label, options);
  const double p1 = static_cast<double>(n1) / static_cast<double>(data.n());
  const double odds = p1 / (1.0 - p1);
  DensityRatioFit out{WeightFn::uniform(), nullptr, p1};
  out.sel = [model](CovRef x) { return model.predict(x); };
  out.w_star = WeightFn(
      [model, odds](CovRef x) {
        const double s1 = model.predict(x);
        return std::clamp(odds * (1.0 - s1) / s1, kDensityRatioLow, kDensityRatioHigh);
      },
      Normalization::train, "train");
  return out;
}

namespace {

// Each row contributes psi_i; the influence value is psi_i - coef_i * point,
// where the coefficients average to one.
struct RowTerms {
  std::vector<Index> rows;
  std::vector<double> psi;
  std::vector<double> coef;
  ClipStats clips;

  void append(const RowTerms& o) {
    rows.insert(rows.end(), o.rows.begin(), o.rows.end());
    psi.insert(psi.end(), o.psi.begin(), o.psi.end());
    coef.insert(coef.end(), o.coef.begin(), o.coef.end());
    clips += o.clips;
  }
};

struct SiteScales {
  double h0 = 0.0;  ///< 1 / P_n(S = 0)
  double h1 = 0.0;  ///< 1 / P_n(S = 1)
};

SiteScales site_scales(const LabeledDataset& data) {
  const double n = static_cast<double>(data.n());
  const double n0 = static_cast<double>(data.count_site(kCalibrationSite));
  const double n1 = static_cast<double>(data.count_site(kTrainingSite));
  return {n0 > 0 ? n / n0 : 0.0, n1 > 0 ? n / n1 : 0.0};
}

double arm_average(const Policy& pi, const NuisanceSet& nuisances, CovRef x) {
  double acc = 0.0;
  for (int a : nuisances.actions) {
    const double q = pi.prob(a, x);
    if (q != 0.0) acc += q * nuisances.mu(a, x);
  }
  return acc;
}

double row_psi(EstimatorTag tag, const Policy& pi, const LabeledDataset& data, Index i, const NuisanceSet& nuis,
               const SiteScales& scales, ClipStats* clips) {
  const auto x = data.x(i);
  const int s = data.site(i);
  switch (tag) {
    case EstimatorTag::ipw: {
      const int a = data.action(i);
      return pi.prob(a, x) * data.outcome(i) / clipped_propensity(nuis, a, x, kCalibrationSite, clips);
    }
    case EstimatorTag::aipw: {
      const int a = data.action(i);
      const double ratio = pi.prob(a, x) / clipped_propensity(nuis, a, x, kCalibrationSite, clips);
      return ratio * (data.outcome(i) - nuis.mu(a, x)) + arm_average(pi, nuis, x);
    }
    case EstimatorTag::eff: {
      const int a = data.action(i);
      const double sel = nuis.sel(x);
      const double w = clip(nuis.w_star(x), kDensityRatioLow, kDensityRatioHigh, clips);
      const double tau = (1.0 - sel) / clipped_propensity(nuis, a, x, kCalibrationSite, clips) +
                         sel * w / clipped_propensity(nuis, a, x, kTrainingSite, clips);
      double psi = pi.prob(a, x) * tau * (data.outcome(i) - nuis.mu(a, x));
      if (s == kCalibrationSite) psi += scales.h0 * arm_average(pi, nuis, x);
      return psi;
    }
    case EstimatorTag::onlyx: {
      if (s == kCalibrationSite) return scales.h0 * arm_average(pi, nuis, x);
      const int a = data.action(i);
      const double w = clip(nuis.w_star(x), kDensityRatioLow, kDensityRatioHigh, clips);
      return scales.h1 * pi.prob(a, x) / clipped_propensity(nuis, a, x, kCalibrationSite, clips) * w *
             (data.outcome(i) - nuis.mu(a, x));
    }
    case EstimatorTag::plugin:
      break;
  }
  throw ConfigurationError("plug-in has no per-row influence terms");
}

std::vector<Index> estimator_rows(EstimatorTag tag, const LabeledDataset& data) {
  std::vector<Index> rows;
  switch (tag) {
    case EstimatorTag::ipw:
    case EstimatorTag::aipw:
      for (Index i = 0; i < data.n(); ++i) {
        if (data.site(i) == kCalibrationSite && data.observed(i)) rows.push_back(i);
      }
      if (rows.empty()) throw MissingDataError("no calibration rows carry an action and outcome");
      break;
    case EstimatorTag::eff:
      if (!data.has_site(kTrainingSite) || !data.has_site(kCalibrationSite)) {
        throw IdentificationError("efficient estimator needs rows from both sites");
      }
      for (Index i = 0; i < data.n(); ++i) {
        if (!data.observed(i)) {
          throw NotApplicableError("calibration rows lack (A, Y); use the onlyx estimator");
        }
        rows.push_back(i);
      }
      break;
    case EstimatorTag::onlyx:
      if (!data.has_site(kTrainingSite) || !data.has_site(kCalibrationSite)) {
        throw IdentificationError("onlyx estimator needs rows from both sites");
      }
      rows.resize(static_cast<std::size_t>(data.n()));
      std::iota(rows.begin(), rows.end(), Index{0});
      break;
    case EstimatorTag::plugin:
      break;
  }
  return rows;
}

void check_nuisances(EstimatorTag tag, const NuisanceSet& nuis) {
  nuis.require_phi();
  if (tag != EstimatorTag::ipw) nuis.require_mu();
  if (tag == EstimatorTag::eff && !nuis.sel) throw ConfigurationError("selection probability is not populated");
  if ((tag == EstimatorTag::eff || tag == EstimatorTag::onlyx) && !nuis.w_star) {
    throw ConfigurationError("density ratio w* is not populated");
  }
}

// Terms for the given rows; when `complement` is set the terms of the
// complement policy are subtracted.
RowTerms compute_terms(EstimatorTag tag, const Policy& pi, const Policy* complement, const LabeledDataset& data,
                       const std::vector<Index>& rows, const NuisanceSet& nuis, const SiteScales& scales) {
  check_nuisances(tag, nuis);
  RowTerms t;
  t.rows = rows;
  t.psi.reserve(rows.size());
  t.coef.reserve(rows.size());
  const bool pooled = tag == EstimatorTag::eff || tag == EstimatorTag::onlyx;
  for (Index i : rows) {
    double psi = row_psi(tag, pi, data, i, nuis, scales, &t.clips);
    if (complement) psi -= row_psi(tag, *complement, data, i, nuis, scales, nullptr);
    t.psi.push_back(psi);
    t.coef.push_back(pooled ? (data.site(i) == kCalibrationSite ? scales.h0 : 0.0) : 1.0);
  }
  return t;
}

ValueEstimate finish(EstimatorTag tag, const RowTerms& t) {
  ValueEstimate est;
  est.tag = tag;
  est.n_used = static_cast<Index>(t.psi.size());
  est.point = order_free_mean(t.psi);
  std::vector<double> inf(t.psi.size());
  std::vector<double> sq(t.psi.size());
  for (std::size_t k = 0; k < inf.size(); ++k) {
    inf[k] = t.psi[k] - t.coef[k] * est.point;
    sq[k] = inf[k] * inf[k];
  }
  est.if_variance = order_free_mean(std::move(sq)) / static_cast<double>(est.n_used);
  // Report influence values in original row order.
  std::vector<std::size_t> order(t.rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return t.rows[a] < t.rows[b]; });
  est.influence.resize(inf.size());
  for (std::size_t k = 0; k < order.size(); ++k) est.influence[k] = inf[order[k]];
  est.clipped_fraction = t.clips.fraction();
  return est;
}

ValueEstimate fixed_estimate(EstimatorTag tag, const Policy& pi, const Policy* complement, const LabeledDataset& data,
                             const NuisanceSet& nuis) {
  const auto rows = estimator_rows(tag, data);
  return finish(tag, compute_terms(tag, pi, complement, data, rows, nuis, site_scales(data)));
}

PolicyPtr complement_of(PolicyPtr pi) { return std::make_shared<ComplementPolicy>(std::move(pi)); }

}  // namespace

ValueEstimate value_ipw(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances) {
  return fixed_estimate(EstimatorTag::ipw, pi, nullptr, data, nuisances);
}

ValueEstimate value_aipw(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances) {
  return fixed_estimate(EstimatorTag::aipw, pi, nullptr, data, nuisances);
}

ValueEstimate value_eff(const Policy& pi, const LabeledDataset& data, const NuisanceSet& nuisances) {
  return fixed_estimate(EstimatorTag::eff, pi, nullptr, data, nuisances);
}

ValueEstimate value_onlyx(const Policy& rho, const LabeledDataset& data, const NuisanceSet& nuisances) {
  return fixed_estimate(EstimatorTag::onlyx, rho, nullptr, data, nuisances);
}

ValueEstimate centered_eff(PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances) {
  const auto bar = complement_of(pi);
  return fixed_estimate(EstimatorTag::eff, *pi, bar.get(), data, nuisances);
}

ValueEstimate centered_onlyx(PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances) {
  const auto bar = complement_of(pi);
  return fixed_estimate(EstimatorTag::onlyx, *pi, bar.get(), data, nuisances);
}

ValueEstimate centered_value_plugin(const Policy& pi, const Covariates& calibration,
                                    const std::function<double(CovRef)>& cate) {
  if (calibration.rows() < 1) throw MissingDataError("no calibration covariates");
  std::vector<double> terms(static_cast<std::size_t>(calibration.rows()));
  for (Index i = 0; i < calibration.rows(); ++i) {
    const auto x = row(calibration, i);
    terms[static_cast<std::size_t>(i)] = (2.0 * pi.prob(1, x) - 1.0) * cate(x);
  }
  ValueEstimate est;
  est.tag = EstimatorTag::plugin;
  est.n_used = calibration.rows();
  est.point = order_free_mean(std::move(terms));
  return est;
}

ValueEstimate estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data, const NuisanceSet& nuisances,
                       bool centered) {
  if (tag == EstimatorTag::plugin) {
    NuisanceSet n = nuisances;
    return centered_value_plugin(*pi, data.covariates_of_site(kCalibrationSite),
                                 [n](CovRef x) { return n.conditional_effect(x); });
  }
  if (!centered) return fixed_estimate(tag, *pi, nullptr, data, nuisances);
  const auto bar = complement_of(pi);
  return fixed_estimate(tag, *pi, bar.get(), data, nuisances);
}

namespace {

std::vector<Index> outcome_rows(const LabeledDataset& data, MuSource source, int action) {
  std::vector<Index> rows;
  for (Index i = 0; i < data.n(); ++i) {
    if (!data.observed(i) || data.action(i) != action) continue;
    const int s = data.site(i);
    if ((source == MuSource::train && s != kTrainingSite) || (source == MuSource::calib && s != kCalibrationSite)) {
      continue;
    }
    rows.push_back(i);
  }
  return rows;
}

FittedRegression fit_outcome(const LabeledDataset& data, const std::vector<Index>& rows,
                             const Eigen::VectorXd& target, const NuisanceFitOptions& options) {
  const auto m = static_cast<Index>(rows.size());
  Covariates x(m, data.p());
  Eigen::VectorXd y(m);
  for (Index k = 0; k < m; ++k) {
    x.row(k) = data.covariates().row(rows[static_cast<std::size_t>(k)]);
    y(k) = target(rows[static_cast<std::size_t>(k)]);
  }
  const Index needed = options.outcome_learner == RegressionFamily::boosted_stumps
                           ? Index{10}
                           : static_cast<Index>(std::max(options.sieve.folds, 2));
  if (m < needed) {
    const double c = m > 0 ? y.mean() : 0.0;
    return FittedRegression(options.outcome_learner, 0, [c](CovRef) { return c; });
  }
  if (options.outcome_learner == RegressionFamily::boosted_stumps) return fit_boosted_stumps(x, y, options.boosting);
  return fit_sieve(x, y, options.sieve);
}

}  // namespace

NuisanceSet fit_value_nuisances(const LabeledDataset& data, const NuisanceFitOptions& options) {
  NuisanceSet nuis;
  nuis.actions = data.action_set();
  const bool binary = nuis.actions.size() == 2;

  std::vector<FittedRegression> arms;
  for (int a : nuis.actions) arms.push_back(fit_outcome(data, outcome_rows(data, options.mu_source, a),
                                                        data.outcomes(), options));
  const std::vector<int> actions = nuis.actions;
  nuis.mu = [arms, actions](int a, CovRef x) { return arms[action_index(actions, a)].predict(x); };

  if (options.known_propensity) {
    if (!binary) throw ConfigurationError("a known propensity needs a binary action set");
    const double p1 = *options.known_propensity;
    if (!(p1 > 0.0 && p1 < 1.0)) throw ConfigurationError("known propensity must lie in (0, 1)");
    const int hi = actions.back();
    nuis.phi = [p1, hi](int a, CovRef, int) { return a == hi ? p1 : 1.0 - p1; };
  } else {
    // Per-site fits; a site without labels borrows the other site's fit.
    std::vector<std::function<double(int, CovRef)>> site_fit(2);
    for (int s : {kCalibrationSite, kTrainingSite}) {
      std::vector<Index> rows;
      for (Index i = 0; i < data.n(); ++i) {
        if (data.site(i) == s && data.observed(i)) rows.push_back(i);
      }
      if (rows.empty()) continue;
      if (binary) {
        const auto m = static_cast<Index>(rows.size());
        Covariates x(m, data.p());
        Eigen::VectorXi label(m);
        for (Index k = 0; k < m; ++k) {
          x.row(k) = data.covariates().row(rows[static_cast<std::size_t>(k)]);
          label(k) = data.action(rows[static_cast<std::size_t>(k)]) == actions.back() ? 1 : 0;
        }
        const int hi = actions.back();
        const double frac = label.cast<double>().mean();
        if (frac == 0.0 || frac == 1.0) {
          site_fit[static_cast<std::size_t>(s)] = [frac, hi](int a, CovRef) { return a == hi ? frac : 1.0 - frac; };
        } else {
          const FittedRegression model = fit_logistic(x, label, options.logistic);
          site_fit[static_cast<std::size_t>(s)] = [model, hi](int a, CovRef xi) {
            const double p = model.predict(xi);
            return a == hi ? p : 1.0 - p;
          };
        }
      } else {
        std::vector<double> freq(actions.size(), 0.0);
        for (Index i : rows) freq[action_index(actions, data.action(i))] += 1.0 / static_cast<double>(rows.size());
        site_fit[static_cast<std::size_t>(s)] = [freq, actions](int a, CovRef) {
          return freq[action_index(actions, a)];
        };
      }
    }
    if (!site_fit[0]) site_fit[0] = site_fit[1];
    if (!site_fit[1]) site_fit[1] = site_fit[0];
    if (!site_fit[0]) throw MissingDataError("no labeled rows to fit propensities");
    nuis.phi = [site_fit](int a, CovRef x, int s) {
      return site_fit[s == kCalibrationSite ? 0 : 1](a, x);
    };
  }

  if (data.has_site(kTrainingSite) && data.has_site(kCalibrationSite)) {
    const DensityRatioFit ratio = fit_density_ratio(data, options.logistic);
    nuis.sel = ratio.sel;
    const WeightFn w = ratio.w_star;
    nuis.w_star = [w](CovRef x) { return w(x); };
  }
  return nuis;
}

std::vector<int> fold_assignment(const LabeledDataset& data, int folds, std::uint64_t seed) {
  if (folds < 1) throw ConfigurationError("folds must be positive");
  std::vector<int> fold(static_cast<std::size_t>(data.n()), 0);
  auto rng = make_stream(seed, 0, 0xF01D);
  for (int s : {kCalibrationSite, kTrainingSite}) {
    auto rows = data.rows_with_site(s);
    std::shuffle(rows.begin(), rows.end(), rng);
    for (std::size_t k = 0; k < rows.size(); ++k) fold[static_cast<std::size_t>(rows[k])] = static_cast<int>(k % folds);
  }
  return fold;
}

std::vector<NuisanceSet> fit_fold_nuisances(const LabeledDataset& data, const std::vector<int>& fold, int folds,
                                            const NuisanceFitter& fitter) {
  std::vector<NuisanceSet> out;
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> rest;
    for (Index i = 0; i < data.n(); ++i) {
      if (fold[static_cast<std::size_t>(i)] != f) rest.push_back(i);
    }
    if (rest.empty()) throw ConfigurationError("a cross-fitting fold leaves no training rows");
    out.push_back(fitter(data.subset(rest)));
  }
  return out;
}

ValueEstimate crossfit_estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data,
                                const std::vector<int>& fold, const std::vector<NuisanceSet>& fold_nuisances,
                                bool centered) {
  if (tag == EstimatorTag::plugin) throw ConfigurationError("the plug-in is not cross-fitted");
  if (static_cast<Index>(fold.size()) != data.n()) throw ConfigurationError("fold labels do not match the rows");
  const auto rows = estimator_rows(tag, data);
  const SiteScales scales = site_scales(data);
  const PolicyPtr bar = centered ? complement_of(pi) : nullptr;
  RowTerms all;
  for (std::size_t f = 0; f < fold_nuisances.size(); ++f) {
    std::vector<Index> eval;
    for (Index i : rows) {
      if (fold[static_cast<std::size_t>(i)] == static_cast<int>(f)) eval.push_back(i);
    }
    if (eval.empty()) continue;
    all.append(compute_terms(tag, *pi, bar.get(), data, eval, fold_nuisances[f], scales));
  }
  if (all.psi.size() != rows.size()) throw ConfigurationError("fold labels outside the nuisance list");
  return finish(tag, all);
}

ValueEstimate crossfit_estimate(EstimatorTag tag, PolicyPtr pi, const LabeledDataset& data,
                                const NuisanceFitter& fitter, int folds, std::uint64_t seed, bool centered) {
  if (tag == EstimatorTag::plugin || folds <= 1) return estimate(tag, pi, data, fitter(data), centered);
  const auto fold = fold_assignment(data, folds, seed);
  return crossfit_estimate(tag, pi, data, fold, fit_fold_nuisances(data, fold, folds, fitter), centered);
}

FittedRegression fit_cate_signal(const LabeledDataset& data, const NuisanceSet& nuisances,
                                 const BoostingOptions& options) {
  if (nuisances.actions != binary_actions()) throw ConfigurationError("the effect signal needs actions {-1, 1}");
  const auto rows = data.rows_with_site(kTrainingSite);
  const auto m = static_cast<Index>(rows.size());
  Covariates x(m, data.p());
  Eigen::VectorXd target(m);
  for (Index k = 0; k < m; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    x.row(k) = data.covariates().row(i);
    const int a = data.action(i);
    target(k) = data.outcome(i) * a / clipped_propensity(nuisances, a, data.x(i), kTrainingSite);
  }
  return fit_boosted_stumps(x, target, options);
}

}  // namespace covshift
