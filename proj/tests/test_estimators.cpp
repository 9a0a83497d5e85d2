#include "covshift/estimators.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace covshift;
using covshift::testing::column;
using covshift::testing::point;
using covshift::testing::random_two_site;

namespace {

/// Truth of the random_two_site design: mu(a, x) = x1 + a x2 / 2, phi = 1/2,
/// no shift, so w* = 1 and P(S = 1 | x) is the site fraction.
NuisanceSet design_truth(double p_s1) {
  NuisanceSet n;
  n.mu = [](int a, CovRef x) { return x(0) + 0.5 * a * (x.size() > 1 ? x(1) : x(0)); };
  n.phi = [](int, CovRef, int) { return 0.5; };
  n.sel = [p_s1](CovRef) { return p_s1; };
  n.w_star = [](CovRef) { return 1.0; };
  return n;
}

LabeledDataset calibration_rows(const std::vector<double>& x, const std::vector<int>& a, const std::vector<double>& y) {
  const auto n = static_cast<Index>(x.size());
  Eigen::VectorXi av(n + 1);
  Eigen::VectorXi s = Eigen::VectorXi::Constant(n + 1, kCalibrationSite);
  Eigen::VectorXd yv(n + 1);
  std::vector<double> xs = x;
  xs.push_back(0.0);
  for (Index i = 0; i < n; ++i) {
    av(i) = a[static_cast<std::size_t>(i)];
    yv(i) = y[static_cast<std::size_t>(i)];
  }
  // One training row so both sites exist; it never enters IPW or AIPW.
  av(n) = 1;
  yv(n) = 0.0;
  s(n) = kTrainingSite;
  return LabeledDataset(column(xs), av, yv, std::vector<bool>(static_cast<std::size_t>(n + 1), true), s);
}

NuisanceSet constant_propensity(double p1) {
  NuisanceSet n;
  n.phi = [p1](int a, CovRef, int) { return a == 1 ? p1 : 1.0 - p1; };
  n.mu = [](int, CovRef) { return 0.0; };
  return n;
}

const auto treat_all = std::make_shared<ConstantPolicy>(std::vector<int>{-1, 1}, std::vector<double>{0.0, 1.0});

}  // namespace

TEST_CASE("estimator names round-trip") {
  for (auto t : {EstimatorTag::ipw, EstimatorTag::aipw, EstimatorTag::eff, EstimatorTag::onlyx, EstimatorTag::plugin}) {
    CHECK(parse_estimator(to_string(t)) == t);
  }
  CHECK_THROWS_AS(parse_estimator("forest"), ConfigurationError);
  CHECK(parse_mu_source("pooled") == MuSource::pooled);
  CHECK_THROWS_AS(parse_mu_source("x"), ConfigurationError);
}

TEST_CASE("density ratio without shift is constant one") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  Covariates x(400, 2);
  for (Index i = 0; i < 200; ++i) {
    x(i, 0) = z(rng);
    x(i, 1) = z(rng);
    x.row(200 + i) = x.row(i);
  }
  Eigen::VectorXi s(400);
  s.head(200).setConstant(kTrainingSite);
  s.tail(200).setConstant(kCalibrationSite);
  const LabeledDataset data(x, Eigen::VectorXi::Constant(400, 1), Eigen::VectorXd::Zero(400),
                            std::vector<bool>(400, true), s);
  const auto fit = fit_density_ratio(data);
  CHECK(fit.p_s1 == doctest::Approx(0.5));
  for (Index i = 0; i < 20; ++i) CHECK(fit.w_star(row(x, i)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("density ratio on a discrete toy") {
  // x = 0: one training and one calibration row; x = 1: three training rows and one calibration row.
  const Covariates x = column({0.0, 0.0, 1.0, 1.0, 1.0, 1.0});
  Eigen::VectorXi s(6);
  s << 1, 0, 1, 1, 1, 0;
  const LabeledDataset data(x, Eigen::VectorXi::Constant(6, 1), Eigen::VectorXd::Zero(6), std::vector<bool>(6, true),
                            s);
  const auto fit = fit_density_ratio(data);
  CHECK(fit.p_s1 == doctest::Approx(2.0 / 3.0));
  CHECK(fit.sel(point(0.0)) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(fit.w_star(point(0.0)) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(fit.w_star(point(1.0)) == doctest::Approx(2.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("density ratio self-normalizes on the training sample") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> z;
  const Index n = 5000;
  Covariates x(2 * n, 1);
  Eigen::VectorXi s(2 * n);
  for (Index i = 0; i < 2 * n; ++i) {
    s(i) = i < n ? kTrainingSite : kCalibrationSite;
    x(i, 0) = z(rng) + (i < n ? 0.0 : 0.5);
  }
  const LabeledDataset data(x, Eigen::VectorXi::Constant(2 * n, 1), Eigen::VectorXd::Zero(2 * n),
                            std::vector<bool>(static_cast<std::size_t>(2 * n), true), s);
  const auto fit = fit_density_ratio(data);
  double mean = 0.0;
  for (Index i = 0; i < n; ++i) mean += fit.w_star(row(x, i)) / static_cast<double>(n);
  CHECK(std::abs(mean - 1.0) <= 0.05);

  const LabeledDataset one_site = LabeledDataset::training_only(column({0.0, 1.0}), Eigen::VectorXi::Ones(2),
                                                                Eigen::VectorXd::Zero(2));
  CHECK_THROWS_AS(fit_density_ratio(one_site), IdentificationError);
}

TEST_CASE("IPW examples") {
  const LabeledDataset data = calibration_rows({0.1, 0.2, 0.3}, {1, -1, 1}, {1.0, 2.0, 6.0});
  const RulePolicy match([](CovRef x) { return x(0) == 0.2 ? -1 : 1; });
  // phi = 1 is clipped to 0.99, so the mean of Y is inflated by 1 / 0.99.
  NuisanceSet certain;
  certain.phi = [](int a, CovRef x, int) { return (x(0) == 0.2) == (a == -1) ? 1.0 : 0.0; };
  const auto est = value_ipw(match, data, certain);
  CHECK(est.point == doctest::Approx(3.0 / 0.99));
  CHECK(est.n_used == 3);
  CHECK(est.clipped_fraction > 0.0);

  const LabeledDataset one = calibration_rows({0.0}, {1}, {2.0});
  CHECK(value_ipw(*treat_all, one, constant_propensity(0.5)).point == doctest::Approx(4.0));

  NuisanceSet varying;
  auto p1 = [](CovRef x) { return 0.2 + 0.5 * x(0); };
  varying.phi = [p1](int a, CovRef x, int) { return a == 1 ? p1(x) : 1.0 - p1(x); };
  const FunctionPolicy same([p1](int a, CovRef x) { return a == 1 ? p1(x) : 1.0 - p1(x); });
  CHECK(value_ipw(same, data, varying).point == doctest::Approx(3.0));

  const LabeledDataset hidden = data.without_calibration_outcomes();
  CHECK_THROWS_AS(value_ipw(same, hidden, varying), MissingDataError);
}

TEST_CASE("AIPW examples") {
  const LabeledDataset data = calibration_rows({0.1, 0.2, 0.3}, {1, -1, 1}, {1.0, 2.0, 6.0});
  NuisanceSet zero = constant_propensity(0.4);
  CHECK(value_aipw(*treat_all, data, zero).point == doctest::Approx(value_ipw(*treat_all, data, zero).point));

  const LabeledDataset one = calibration_rows({0.5}, {1}, {2.0});
  NuisanceSet nuis = constant_propensity(0.5);
  nuis.mu = [](int a, CovRef) { return a == 1 ? 1.0 : 0.0; };
  CHECK(value_aipw(*treat_all, one, nuis).point == doctest::Approx(3.0));

  NuisanceSet exact = constant_propensity(0.3);
  exact.mu = [](int a, CovRef x) { return a * x(0) + 1.0; };
  const LabeledDataset clean = calibration_rows({0.1, 0.2, 0.3}, {1, -1, 1}, {1.1, 0.8, 1.3});
  const ThresholdPolicy pi(0.15);
  const double plug = (0.9 + 1.2 + 1.3) / 3.0;
  CHECK(value_aipw(pi, clean, exact).point == doctest::Approx(plug).epsilon(1e-12));
}

TEST_CASE("AIPW is invariant to a constant added to mu on a paired design") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> xs, ys;
  std::vector<int> as;
  for (int i = 0; i < 50; ++i) {
    const double x = u(rng);
    for (int a : {-1, 1}) {
      xs.push_back(x);
      as.push_back(a);
      ys.push_back(x + a * 0.3 + u(rng));
    }
  }
  const LabeledDataset data = calibration_rows(xs, as, ys);
  NuisanceSet base = constant_propensity(0.5);
  base.mu = [](int a, CovRef x) { return x(0) * a; };
  NuisanceSet shifted = base;
  shifted.mu = [](int a, CovRef x) { return x(0) * a + 7.5; };
  const ThresholdPolicy pi(0.1);
  CHECK(std::abs(value_aipw(pi, data, base).point - value_aipw(pi, data, shifted).point) <= 1e-8);
}

TEST_CASE("efficient estimator examples and errors") {
  std::mt19937_64 rng(4);
  LabeledDataset data = random_two_site(rng, 100, 60, 2, false);
  NuisanceSet truth = design_truth(100.0 / 160.0);
  // Outcomes replaced by mu(A, X): residual terms vanish.
  Eigen::VectorXd y(data.n());
  for (Index i = 0; i < data.n(); ++i) y(i) = truth.mu(data.action(i), data.x(i));
  std::vector<bool> obs(static_cast<std::size_t>(data.n()), true);
  const LabeledDataset clean(data.covariates(), data.actions(), y, obs, data.sites());
  const auto pi = std::make_shared<ThresholdPolicy>(0.0);
  double plug = 0.0;
  const auto calib = clean.rows_with_site(kCalibrationSite);
  for (Index i : calib) plug += (pi->prob(1, clean.x(i)) * truth.mu(1, clean.x(i)) +
                                 pi->prob(-1, clean.x(i)) * truth.mu(-1, clean.x(i))) /
                                static_cast<double>(calib.size());
  CHECK(value_eff(*pi, clean, truth).point == doctest::Approx(plug).epsilon(1e-12));
  CHECK(value_onlyx(*pi, clean, truth).point == doctest::Approx(plug).epsilon(1e-12));

  CHECK_THROWS_AS(value_eff(*pi, clean.without_calibration_outcomes(), truth), NotApplicableError);
  NuisanceSet no_ratio = truth;
  no_ratio.w_star = nullptr;
  CHECK_THROWS_AS(value_onlyx(*pi, clean, no_ratio), ConfigurationError);
  CHECK_THROWS_AS(value_eff(*pi, LabeledDataset::training_only(clean.covariates(), clean.actions(), y), truth),
                  IdentificationError);
}

TEST_CASE("onlyx with unit ratio on shared covariates equals training-sample AIPW") {
  std::mt19937_64 rng(5);
  const LabeledDataset train = random_two_site(rng, 80, 0, 2, false);
  const Index n = train.n();
  Covariates x(2 * n, 2);
  x.topRows(n) = train.covariates();
  x.bottomRows(n) = train.covariates();
  Eigen::VectorXi a(2 * n), s(2 * n);
  Eigen::VectorXd y(2 * n);
  std::vector<bool> obs(static_cast<std::size_t>(2 * n), true);
  for (Index i = 0; i < n; ++i) {
    a(i) = train.action(i);
    y(i) = train.outcome(i);
    s(i) = kTrainingSite;
    a(n + i) = 0;
    y(n + i) = 0.0;
    s(n + i) = kCalibrationSite;
    obs[static_cast<std::size_t>(n + i)] = false;
  }
  const LabeledDataset pooled(x, a, y, obs, s);
  Eigen::VectorXi s_calib = Eigen::VectorXi::Constant(n + 1, kCalibrationSite);
  s_calib(n) = kTrainingSite;
  Covariates xc(n + 1, 2);
  xc.topRows(n) = train.covariates();
  xc.row(n).setZero();
  Eigen::VectorXi ac(n + 1);
  ac.head(n) = train.actions();
  ac(n) = 1;
  Eigen::VectorXd yc(n + 1);
  yc.head(n) = train.outcomes();
  yc(n) = 0.0;
  const LabeledDataset as_calib(xc, ac, yc, std::vector<bool>(static_cast<std::size_t>(n + 1), true), s_calib);

  NuisanceSet nuis = design_truth(0.5);
  nuis.mu = [](int act, CovRef v) { return 0.3 * v(0) - 0.2 * act; };
  nuis.phi = [](int act, CovRef v, int) { return act == 1 ? 0.4 + 0.2 * v(1) : 0.6 - 0.2 * v(1); };
  const ThresholdPolicy pi(0.2);
  CHECK(std::abs(value_onlyx(pi, pooled, nuis).point - value_aipw(pi, as_calib, nuis).point) <= 1e-10);
}

TEST_CASE("efficient estimator interval covers the truth about 95% of the time") {
  const auto pi = std::make_shared<RulePolicy>([](CovRef x) { return x(1) > 0.0 ? 1 : -1; });
  const double truth_value = 0.25;
  int covered = 0;
  const int reps = 500;
  for (int r = 0; r < reps; ++r) {
    auto rng = make_stream(77, static_cast<std::uint64_t>(r));
    const LabeledDataset data = random_two_site(rng, 200, 200, 2, false);
    const auto est = value_eff(*pi, data, design_truth(0.5));
    REQUIRE(est.if_variance.has_value());
    if (std::abs(est.point - truth_value) <= 1.96 * std::sqrt(*est.if_variance)) ++covered;
  }
  const double rate = static_cast<double>(covered) / reps;
  CHECK(rate >= 0.92);
  CHECK(rate <= 0.98);
}

TEST_CASE("plug-in examples") {
  Covariates c(2, 2);
  c << 0.0, 1.0, 0.0, 3.0;
  const ConstantPolicy all(std::vector<int>{-1, 1}, std::vector<double>{0.0, 1.0});
  CHECK(centered_value_plugin(all, c, [](CovRef) { return 0.0; }).point == 0.0);
  const auto est = centered_value_plugin(all, c, [](CovRef x) { return x(1); });
  CHECK(est.point == doctest::Approx(2.0));
  CHECK_FALSE(est.if_variance.has_value());
  CHECK(est.tag == EstimatorTag::plugin);
  CHECK_THROWS_AS(centered_value_plugin(all, Covariates(0, 2), [](CovRef) { return 0.0; }), MissingDataError);
}

TEST_CASE("estimators are invariant to row order") {
  std::mt19937_64 rng(6);
  const LabeledDataset data = random_two_site(rng, 120, 70, 2, false);
  std::vector<Index> perm(static_cast<std::size_t>(data.n()));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const LabeledDataset shuffled = data.subset(perm);
  const NuisanceSet nuis = design_truth(120.0 / 190.0);
  const auto pi = std::make_shared<ThresholdPolicy>(0.1);
  for (auto tag : {EstimatorTag::ipw, EstimatorTag::aipw, EstimatorTag::eff, EstimatorTag::onlyx, EstimatorTag::plugin}) {
    for (bool centered : {false, true}) {
      const auto a = estimate(tag, pi, data, nuis, centered);
      const auto b = estimate(tag, pi, shuffled, nuis, centered);
      CHECK(a.point == b.point);
      CHECK(a.if_variance == b.if_variance);
    }
  }
}

TEST_CASE("fold assignment is balanced within each site") {
  std::mt19937_64 rng(7);
  const LabeledDataset data = random_two_site(rng, 101, 37, 1, true);
  const auto fold = fold_assignment(data, 3, 9);
  CHECK(fold == fold_assignment(data, 3, 9));
  for (int s : {kTrainingSite, kCalibrationSite}) {
    std::vector<int> count(3, 0);
    for (Index i : data.rows_with_site(s)) ++count[static_cast<std::size_t>(fold[static_cast<std::size_t>(i)])];
    CHECK(*std::max_element(count.begin(), count.end()) - *std::min_element(count.begin(), count.end()) <= 1);
  }
  CHECK_THROWS_AS(fold_assignment(data, 0, 1), ConfigurationError);
}

TEST_CASE("cross-fitted estimates use out-of-fold nuisances") {
  std::mt19937_64 rng(8);
  const LabeledDataset data = random_two_site(rng, 300, 100, 2, true);
  NuisanceFitOptions opts;
  opts.known_propensity = 0.5;
  const NuisanceFitter fitter = [opts](const LabeledDataset& d) { return fit_value_nuisances(d, opts); };
  const auto pi = std::make_shared<ThresholdPolicy>(0.0);
  const auto fold = fold_assignment(data, 2, 4);
  const auto fold_nuis = fit_fold_nuisances(data, fold, 2, fitter);
  const auto a = crossfit_estimate(EstimatorTag::onlyx, pi, data, fold, fold_nuis);
  const auto b = crossfit_estimate(EstimatorTag::onlyx, pi, data, fitter, 2, 4);
  CHECK(a.point == b.point);
  CHECK(a.n_used == data.n());
  const auto single = crossfit_estimate(EstimatorTag::onlyx, pi, data, fitter, 1, 4);
  CHECK(single.point == estimate(EstimatorTag::onlyx, pi, data, fitter(data)).point);
  CHECK_THROWS_AS(crossfit_estimate(EstimatorTag::plugin, pi, data, fold, fold_nuis), ConfigurationError);
}

TEST_CASE("value nuisance fitting options") {
  std::mt19937_64 rng(9);
  const LabeledDataset data = random_two_site(rng, 400, 300, 2, false);
  NuisanceFitOptions opts;
  const NuisanceSet fitted = fit_value_nuisances(data, opts);
  REQUIRE(fitted.sel);
  REQUIRE(fitted.w_star);
  const Eigen::Vector2d x(0.2, -0.4);
  CHECK(std::abs(fitted.mu(1, x) - 0.0) < 0.3);
  CHECK(std::abs(fitted.phi(1, x, kTrainingSite) - 0.5) < 0.1);
  CHECK(fitted.phi(1, x, kTrainingSite) + fitted.phi(-1, x, kTrainingSite) == doctest::Approx(1.0));
  CHECK(std::abs(fitted.w_star(x) - 1.0) < 0.3);

  opts.known_propensity = 0.3;
  const NuisanceSet known = fit_value_nuisances(data, opts);
  CHECK(known.phi(1, x, kCalibrationSite) == 0.3);
  CHECK(known.phi(-1, x, kTrainingSite) == doctest::Approx(0.7));

  for (auto src : {MuSource::calib, MuSource::pooled}) {
    opts.mu_source = src;
    CHECK(std::abs(fit_value_nuisances(data, opts).mu(-1, x) - 0.4) < 0.3);
  }
  opts.mu_source = MuSource::train;
  opts.outcome_learner = RegressionFamily::boosted_stumps;
  CHECK(std::abs(fit_value_nuisances(data, opts).mu(1, x) - 0.0) < 0.4);
}

TEST_CASE("effect signal fit tracks the conditional effect") {
  std::mt19937_64 rng(10);
  const LabeledDataset data = random_two_site(rng, 2000, 10, 2, false);
  const auto fit = fit_cate_signal(data, design_truth(0.99));
  // mu(1, x) - mu(-1, x) = x2.
  CHECK(fit.predict(Eigen::Vector2d(0.0, 0.7)) > fit.predict(Eigen::Vector2d(0.0, -0.7)));
  NuisanceSet three = design_truth(0.5);
  three.actions = {0, 1, 2};
  CHECK_THROWS_AS(fit_cate_signal(data, three), ConfigurationError);
}
