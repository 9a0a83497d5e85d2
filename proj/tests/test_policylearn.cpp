#include "covshift/errors.hpp"
#include "covshift/harness.hpp"
#include "covshift/numeric.hpp"
#include "covshift/policylearn.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <random>

using namespace covshift;
using covshift::testing::column;
using covshift::testing::point;

namespace {

ScenarioSpec scenario(ScenarioName name, Index n, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.name = name;
  spec.n_train = n;
  spec.n_test = 1000;
  spec.seed = seed;
  spec.nuisance_mode = NuisanceMode::truth;
  return spec;
}

// Duplicates every row so that the two halves form identical folds.
LabeledDataset doubled(const LabeledDataset& d) {
  const Index n = d.n();
  Covariates x(2 * n, d.p());
  Eigen::VectorXi a(2 * n);
  Eigen::VectorXd y(2 * n);
  for (Index i = 0; i < 2 * n; ++i) {
    x.row(i) = d.covariates().row(i % n);
    a(i) = d.action(i % n);
    y(i) = d.outcome(i % n);
  }
  return LabeledDataset::training_only(std::move(x), std::move(a), std::move(y));
}

}  // namespace

TEST_CASE("weighted value with zero residuals is the plug-in mean") {
  const auto nuis = testing::binary_nuisances([](int a, CovRef x) { return a == 1 ? x(0) : 1.0 - x(0); },
                                              [](CovRef) { return 0.4; }, [](int, CovRef) { return 1.0; });
  const std::vector<double> xs{0.1, 0.4, 0.7, 0.9};
  const std::vector<int> as{1, -1, 1, -1};
  std::vector<double> ys;
  for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(as[i] == 1 ? xs[i] : 1.0 - xs[i]);
  const LabeledDataset data = testing::scalar_training(xs, as, ys);
  const ThresholdPolicy pi(0.5);
  // Plug-in: treat 0.7 and 0.9, control 0.1 and 0.4.
  const double expected = (0.9 + 0.6 + 0.7 + 0.9) / 4.0;
  CHECK(weighted_value_estimate(pi, WeightFn::uniform(), data, nuis) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("weighted value with zero outcome model is Horvitz-Thompson") {
  const auto nuis = testing::binary_nuisances([](int, CovRef) { return 0.0; }, [](CovRef x) { return 0.25 + 0.5 * x(0); },
                                              [](int, CovRef) { return 1.0; });
  const LabeledDataset data = testing::scalar_training({0.2, 0.6, 0.8}, {1, 1, -1}, {2.0, -1.0, 3.0});
  const ThresholdPolicy pi(0.5);
  // Rows: x=0.2 A=1 (pi=0), x=0.6 A=1 (pi=1, phi=0.55), x=0.8 A=-1 (pi=0).
  CHECK(weighted_value_estimate(pi, WeightFn::uniform(), data, nuis) ==
        doctest::Approx(-1.0 / 0.55 / 3.0).epsilon(1e-14));
  const WeightFn w([](CovRef x) { return 2.0 * x(0); });
  CHECK(weighted_value_estimate(pi, w, data, nuis) == doctest::Approx(-1.2 / 0.55 / 3.0).epsilon(1e-14));
}

TEST_CASE("weighted value on scenario 3 with true nuisances") {
  const GeneratedSample s = generate(scenario(ScenarioName::kallus3, 100000, 5), 0);
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus3);
  const ThresholdPolicy pi(0.0);
  const double est = weighted_value_estimate(pi, WeightFn::uniform(), s.data, truth);
  std::vector<double> terms;
  for (Index i = 0; i < s.data.n(); ++i) {
    const auto x = row(s.data.covariates(), i);
    const int a = s.data.action(i);
    const double phi = clip(truth.phi(a, x, kTrainingSite), 0.01, 0.99);
    const double mu_pi = truth.mu(x(0) > 0.0 ? 1 : -1, x);
    terms.push_back(mu_pi + pi.prob(a, x) / phi * (s.data.outcome(i) - truth.mu(a, x)));
  }
  const double se = std::sqrt(order_free_variance(terms) / static_cast<double>(terms.size()));
  // E[X 1{X <= 0}] + E[2 X 1{X > 0}] for X ~ U[-1, 1].
  CHECK(std::abs(est - 0.25) <= 3.0 * se);
}

TEST_CASE("weighted value errors") {
  const auto nuis = testing::binary_nuisances([](int, CovRef) { return 0.0; }, [](CovRef) { return 0.5; },
                                              [](int, CovRef) { return 1.0; });
  Eigen::VectorXi a(2);
  a << 1, -1;
  const LabeledDataset partial(column({0.0, 1.0}), a, Eigen::Vector2d(1.0, 2.0), {true, false},
                               Eigen::Vector2i(kTrainingSite, kCalibrationSite));
  CHECK_THROWS_AS(weighted_value_estimate(ThresholdPolicy(0.0), WeightFn::uniform(), partial, nuis), MissingDataError);
}

TEST_CASE("threshold grid and objective") {
  const auto grid = threshold_grid(column({0.3, -0.2, 0.3, 0.9}));
  CHECK(grid == std::vector<double>{-1.0, -0.2, 0.3, 0.9, 1.0});
  CHECK(first_argmax({1.0, 3.0, 3.0, 2.0}) == 1);
  CHECK(first_argmax({2.0, 2.0 - 1e-14, 1.0}) == 0);
  CHECK(first_argmax({2.0 - 1e-14, 2.0}) == 0);
  CHECK_THROWS_AS(first_argmax({}), ConfigurationError);
}

TEST_CASE("threshold objective matches direct weighted values") {
  std::mt19937_64 rng(3);
  const GeneratedSample s = generate(scenario(ScenarioName::kallus1, 200, 3), 0);
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus1);
  const WeightFn w([](CovRef x) { return 1.0 + x(0) * x(0); });
  const auto grid = threshold_grid(s.data.covariates());
  const auto fast = ThresholdObjective(w, s.data, truth).evaluate(grid);
  for (std::size_t g = 0; g < grid.size(); g += 17) {
    CHECK(fast[g] == doctest::Approx(weighted_value_estimate(ThresholdPolicy(grid[g]), w, s.data, truth))
                         .epsilon(1e-12));
  }
}

TEST_CASE("learn_threshold with a positive effect treats everyone") {
  const auto nuis = testing::binary_nuisances([](int a, CovRef) { return a == 1 ? 1.0 : 0.0; },
                                              [](CovRef) { return 0.5; }, [](int, CovRef) { return 1.0; });
  const LabeledDataset data = testing::scalar_training({-0.5, 0.0, 0.5}, {1, -1, 1}, {1.0, 0.0, 1.0});
  const auto grid = threshold_grid(data.covariates());
  const auto fit = learn_threshold(WeightFn::uniform(), data, nuis, grid);
  CHECK(fit.theta == grid.front());
  CHECK_THROWS_AS(learn_threshold(WeightFn::uniform(), data, nuis, {}), ConfigurationError);
}

TEST_CASE("roots of the scenario effects") {
  CHECK(theta_sharp(ScenarioName::kallus1) == 0.5);
  CHECK(theta_sharp(ScenarioName::kallus2) == 0.5);
  CHECK(theta_sharp(ScenarioName::kallus3) == 0.0);
  CHECK(theta_sharp(ScenarioName::kallus4) == 0.3);
  for (auto name : {ScenarioName::kallus1, ScenarioName::kallus3, ScenarioName::kallus4}) {
    const NuisanceSet truth = true_nuisances(name);
    const double root = theta_sharp(name);
    CHECK(truth.conditional_effect(point(root)) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(truth.conditional_effect(point(root + 0.01)) > 0.0);
    CHECK(truth.conditional_effect(point(root - 0.01)) <= 0.0);
  }
}

TEST_CASE("learn_threshold on scenario 3 with true nuisances is centered at zero") {
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus3);
  const ScenarioSpec spec = scenario(ScenarioName::kallus3, 2000, 17);
  double total = 0.0;
  for (int r = 0; r < 200; ++r) {
    const GeneratedSample s = generate(spec, r);
    total += learn_threshold(WeightFn::uniform(), s.data, truth, threshold_grid(s.data.covariates())).theta;
  }
  CHECK(std::abs(total / 200.0) <= 0.05);
}

TEST_CASE("cross-fit plan is balanced and seeded") {
  const auto a = CrossfitPlan::make(101, 9);
  const auto b = CrossfitPlan::make(101, 9);
  const auto c = CrossfitPlan::make(101, 10);
  CHECK(a.fold_of_row == b.fold_of_row);
  CHECK(a.fold_of_row != c.fold_of_row);
  CHECK(a.rows_of(1).size() + a.rows_of(2).size() == 101);
  CHECK(std::abs(static_cast<long>(a.rows_of(1).size()) - static_cast<long>(a.rows_of(2).size())) <= 1);
  CHECK_THROWS_AS(CrossfitPlan::make(1, 0), InvalidDataError);
}

TEST_CASE("weight recipe names round-trip") {
  for (auto r : {WeightRecipe::retarget, WeightRecipe::uniform, WeightRecipe::local_curvature,
                 WeightRecipe::global_curvature}) {
    CHECK(parse_weight_recipe(to_string(r)) == r);
  }
  CHECK(parse_weight_recipe("local") == WeightRecipe::local_curvature);
  CHECK(parse_weight_recipe("global") == WeightRecipe::global_curvature);
  CHECK_THROWS_AS(parse_weight_recipe("nope"), ConfigurationError);
}

TEST_CASE("uniform cross-fitting with fixed nuisances equals pooled learning") {
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus1);
  const NuisanceFitter fixed = [truth](const LabeledDataset&) { return truth; };
  for (int r = 0; r < 5; ++r) {
    const GeneratedSample s = generate(scenario(ScenarioName::kallus1, 300, 4), r);
    const auto cf = crossfit_learn(s.data, WeightRecipe::uniform, fixed, 77);
    const auto pooled = learn_threshold(WeightFn::uniform(), s.data, truth, threshold_grid(s.data.covariates()));
    CHECK(cf.theta_hat == pooled.theta);
    CHECK(cf.weight_fallbacks == 0);
  }
}

TEST_CASE("identical folds reproduce the full-sample learner") {
  const GeneratedSample s = generate(scenario(ScenarioName::kallus1, 200, 6), 0);
  const LabeledDataset twice = doubled(s.data);
  CrossfitPlan plan;
  plan.fold_of_row.resize(static_cast<std::size_t>(twice.n()));
  for (Index i = 0; i < twice.n(); ++i) plan.fold_of_row[static_cast<std::size_t>(i)] = i < s.data.n() ? 1 : 2;
  const NuisanceFitter fitter = [](const LabeledDataset& d) { return fit_threshold_nuisances(d); };
  const CrossfitContext context(twice, plan, fitter);
  const NuisanceSet full = fitter(s.data);
  for (auto recipe : {WeightRecipe::uniform, WeightRecipe::retarget, WeightRecipe::global_curvature,
                      WeightRecipe::local_curvature}) {
    CAPTURE(to_string(recipe));
    const auto cf = crossfit_learn(context, recipe);
    const auto fs = full_sample_learn(s.data, recipe, full);
    CHECK(cf.theta_hat == fs.theta_hat);
    CHECK(cf.t_selected.has_value() == fs.t_selected.has_value());
    if (cf.t_selected && fs.t_selected) CHECK(*cf.t_selected == *fs.t_selected);
  }
}

TEST_CASE("cross-fitting is reproducible from the seed") {
  const GeneratedSample s = generate(scenario(ScenarioName::kallus2, 300, 8), 0);
  const NuisanceFitter fitter = [](const LabeledDataset& d) { return fit_threshold_nuisances(d); };
  for (auto recipe : {WeightRecipe::retarget, WeightRecipe::local_curvature}) {
    const auto a = crossfit_learn(s.data, recipe, fitter, 5);
    const auto b = crossfit_learn(s.data, recipe, fitter, 5);
    CHECK(a.theta_hat == b.theta_hat);
    CHECK(a.t_by_fold == b.t_by_fold);
  }
}

TEST_CASE("degenerate fold weights fall back to uniform") {
  const GeneratedSample s = generate(scenario(ScenarioName::kallus1, 100, 9), 0);
  NuisanceSet flat = true_nuisances(ScenarioName::kallus1);
  flat.mu = [](int, CovRef x) { return x(0); };
  flat.cate = [](CovRef) { return 0.0; };
  const NuisanceFitter fixed = [flat](const LabeledDataset&) { return flat; };
  for (auto recipe : {WeightRecipe::global_curvature, WeightRecipe::local_curvature}) {
    const auto res = crossfit_learn(s.data, recipe, fixed, 1);
    CHECK(res.weight_fallbacks == 2);
    CHECK_FALSE(res.warnings.empty());
  }
  const auto oracle = oracle_local_learn(s.data, flat, 0.5);
  CHECK(oracle.weight_fallbacks == 1);
  CHECK_FALSE(oracle.t_selected.has_value());
}

TEST_CASE("cross-fitting needs twenty rows") {
  const GeneratedSample s = generate(scenario(ScenarioName::kallus1, 19, 1), 0);
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus1);
  CHECK_THROWS_AS(crossfit_learn(s.data, WeightRecipe::uniform, [truth](const LabeledDataset&) { return truth; }, 0),
                  InvalidDataError);
}

TEST_CASE("oracle learner with true nuisances on scenario 3 picks t = 0") {
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus3);
  const ScenarioSpec spec = scenario(ScenarioName::kallus3, 500, 12);
  CrossfitOptions opts;
  opts.derivative_step = 0.0;
  int zero = 0;
  for (int r = 0; r < 100; ++r) {
    const GeneratedSample s = generate(spec, r);
    const auto res = oracle_local_learn(s.data, truth, 0.0, opts);
    if (res.t_selected && *res.t_selected == 0.0) ++zero;
  }
  CHECK(zero >= 95);
}

TEST_CASE("regret of the optimal threshold is zero within noise") {
  for (auto name : {ScenarioName::kallus1, ScenarioName::kallus3, ScenarioName::kallus4}) {
    ScenarioSpec spec = scenario(name, 20, 13);
    spec.n_test = 100000;
    const GeneratedSample s = generate(spec, 0);
    const NuisanceSet truth = true_nuisances(name);
    const Regret r = regret_eval(ThresholdPolicy(theta_sharp(name)), s.test, truth, WeightFn::uniform());
    CHECK(r.value >= -2.0 * r.se);
    CHECK(r.value <= 2.0 * r.se + 1e-12);
  }
}

TEST_CASE("regret ranking is invariant to scaling the target weight") {
  ScenarioSpec spec = scenario(ScenarioName::kallus4, 20, 14);
  spec.n_test = 5000;
  const GeneratedSample s = generate(spec, 0);
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus4);
  const RegretEvaluator one(s.test, truth, WeightFn::uniform());
  const RegretEvaluator two(s.test, truth, WeightFn::constant(2.0));
  const auto grid = linspace(-1.0, 1.0, 41);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t j = 0; j < grid.size(); ++j) {
      CHECK((one.regret(grid[i]).value < one.regret(grid[j]).value) ==
            (two.regret(grid[i]).value < two.regret(grid[j]).value));
    }
  }
  CHECK(one.regret(0.0).best_theta == two.regret(0.0).best_theta);
}

TEST_CASE("regret evaluator argument errors") {
  const NuisanceSet truth = true_nuisances(ScenarioName::kallus1);
  CHECK_THROWS_AS(RegretEvaluator(Covariates(0, 1), truth, WeightFn::uniform()), InvalidDataError);
  CHECK_THROWS_AS(RegretEvaluator(column({0.0}), NuisanceSet{}, WeightFn::uniform()), ConfigurationError);
}
