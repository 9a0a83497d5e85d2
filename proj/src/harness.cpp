#include "covshift/harness.hpp"

#include "covshift/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace covshift {

std::string to_string(ScenarioName name) {
  switch (name) {
    case ScenarioName::kallus1: return "kallus1";
    case ScenarioName::kallus2: return "kallus2";
    case ScenarioName::kallus3: return "kallus3";
    case ScenarioName::kallus4: return "kallus4";
    case ScenarioName::mo_noshift: return "mo_noshift";
    case ScenarioName::mo_shift: return "mo_shift";
  }
  return "unknown";
}

ScenarioName parse_scenario(const std::string& name) {
  for (auto s : {ScenarioName::kallus1, ScenarioName::kallus2, ScenarioName::kallus3, ScenarioName::kallus4,
                 ScenarioName::mo_noshift, ScenarioName::mo_shift}) {
    if (to_string(s) == name) return s;
  }
  if (name.size() == 1 && name[0] >= '1' && name[0] <= '4') return static_cast<ScenarioName>(name[0] - '1');
  throw ConfigurationError("unknown scenario '" + name + "'");
}

bool is_threshold_scenario(ScenarioName name) {
  return name != ScenarioName::mo_noshift && name != ScenarioName::mo_shift;
}

void ScenarioSpec::validate() const {
  if (replications < 1) throw ConfigurationError("replications must be at least 1");
  if (nuisance_mode == NuisanceMode::fitted && n_train < 100) {
    throw ConfigurationError("fitted nuisances need n_train >= 100");
  }
  if (n_train < 1) throw ConfigurationError("n_train must be positive");
  if (is_threshold_scenario(name) && n_test < 1) throw ConfigurationError("n_test must be positive");
  if (!is_threshold_scenario(name) && n_calib < 1) throw ConfigurationError("n_calib must be positive");
}

Eigen::VectorXd shift_mean() {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(kShiftDimension);
  g(0) = 0.734;
  g(1) = 1.469;
  return g;
}

namespace {

// Scalar scenarios: arm means, variance, and P(A = 1 | x).
double arm_mean(ScenarioName s, int a, double x) {
  if (a == -1) return x;
  switch (s) {
    case ScenarioName::kallus1:
    case ScenarioName::kallus2: return x + (x > 0.0 ? x - 0.5 : 0.0);
    case ScenarioName::kallus3: return 2.0 * x;
    case ScenarioName::kallus4: return x + (x > -0.4 ? x - 0.3 : 0.0);
    default: break;
  }
  throw ConfigurationError("not a scalar scenario");
}

double noise_variance(ScenarioName s, double x) {
  if (s == ScenarioName::kallus2) return x <= 0.0 ? 0.01 : 1.0;
  return 1.0;
}

double treat_probability(ScenarioName s, double x) {
  switch (s) {
    case ScenarioName::kallus1: return x <= 0.0 ? 0.5 : normal_cdf(3.5 * x);
    case ScenarioName::kallus2: return 0.5;
    case ScenarioName::kallus3: return normal_cdf(3.5 * x);
    case ScenarioName::kallus4: return x <= -0.4 ? 0.5 : normal_cdf(2.5 * x);
    default: break;
  }
  throw ConfigurationError("not a scalar scenario");
}

double base_mean(CovRef x) { return 1.0 + x.mean(); }
double shift_effect(CovRef x) { return x(1) - (x(0) * x(0) * x(0) - 2.0 * x(0)); }

Covariates gaussian_design(Index n, bool shifted, std::mt19937_64& rng) {
  std::normal_distribution<double> z;
  const Eigen::VectorXd mean = shifted ? shift_mean() : Eigen::VectorXd::Zero(kShiftDimension);
  Covariates x(n, kShiftDimension);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < kShiftDimension; ++j) x(i, j) = mean(j) + z(rng);
  }
  return x;
}

}  // namespace

NuisanceSet true_nuisances(ScenarioName name) {
  NuisanceSet n;
  if (is_threshold_scenario(name)) {
    n.mu = [name](int a, CovRef x) { return arm_mean(name, a, x(0)); };
    n.phi = [name](int a, CovRef x, int) {
      const double p = treat_probability(name, x(0));
      return a == 1 ? p : 1.0 - p;
    };
    n.sigma2 = [name](int, CovRef x) { return noise_variance(name, x(0)); };
    n.cate = [name](CovRef x) { return arm_mean(name, 1, x(0)) - arm_mean(name, -1, x(0)); };
    n.w_star = [](CovRef) { return 1.0; };
    return n;
  }
  n.mu = [](int a, CovRef x) { return base_mean(x) + 0.5 * a * shift_effect(x); };
  n.phi = [](int, CovRef, int) { return 0.5; };
  n.sigma2 = [](int, CovRef) { return 1.0; };
  n.cate = [](CovRef x) { return shift_effect(x); };
  if (name == ScenarioName::mo_shift) {
    const Eigen::VectorXd g = shift_mean();
    const double half = 0.5 * g.squaredNorm();
    n.w_star = [g, half](CovRef x) { return std::exp(g.dot(x) - half); };
  } else {
    n.w_star = [](CovRef) { return 1.0; };
  }
  return n;
}

double theta_sharp(ScenarioName name) {
  switch (name) {
    case ScenarioName::kallus1:
    case ScenarioName::kallus2: return 0.5;
    case ScenarioName::kallus3: return 0.0;
    case ScenarioName::kallus4: return 0.3;
    default: break;
  }
  throw ConfigurationError("theta_sharp is defined for the scalar scenarios only");
}

PolicyPtr shift_study_policy() {
  return std::make_shared<RulePolicy>([](CovRef x) { return shift_effect(x) > 0.0 ? 1 : -1; });
}

GeneratedSample generate(const ScenarioSpec& spec, int replication) {
  spec.validate();
  const auto rep = static_cast<std::uint64_t>(replication);
  auto train_rng = make_stream(spec.seed, rep, 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> z;

  if (is_threshold_scenario(spec.name)) {
    const Index n = spec.n_train;
    Covariates x(n, 1);
    Eigen::VectorXi a(n);
    Eigen::VectorXd y(n);
    for (Index i = 0; i < n; ++i) {
      const double xi = -1.0 + 2.0 * unif(train_rng);
      const int ai = unif(train_rng) < treat_probability(spec.name, xi) ? 1 : -1;
      x(i, 0) = xi;
      a(i) = ai;
      y(i) = arm_mean(spec.name, ai, xi) + std::sqrt(noise_variance(spec.name, xi)) * z(train_rng);
    }
    auto test_rng = make_stream(spec.seed, rep, 2);
    Covariates test(spec.n_test, 1);
    for (Index i = 0; i < spec.n_test; ++i) test(i, 0) = -1.0 + 2.0 * unif(test_rng);
    return {LabeledDataset::training_only(std::move(x), std::move(a), std::move(y)), std::move(test)};
  }

  auto calib_rng = make_stream(spec.seed, rep, 3);
  const Index n1 = spec.n_train;
  const Index n0 = spec.n_calib;
  const Covariates x1 = gaussian_design(n1, false, train_rng);
  const Covariates x0 = gaussian_design(n0, spec.name == ScenarioName::mo_shift, calib_rng);
  Covariates x(n1 + n0, kShiftDimension);
  x.topRows(n1) = x1;
  x.bottomRows(n0) = x0;
  Eigen::VectorXi a(n1 + n0), s(n1 + n0);
  Eigen::VectorXd y(n1 + n0);
  for (Index i = 0; i < n1 + n0; ++i) {
    auto& rng = i < n1 ? train_rng : calib_rng;
    const int ai = unif(rng) < 0.5 ? 1 : -1;
    const auto xi = row(x, i);
    a(i) = ai;
    y(i) = base_mean(xi) + 0.5 * ai * shift_effect(xi) + z(rng);
    s(i) = i < n1 ? kTrainingSite : kCalibrationSite;
  }
  return {LabeledDataset(std::move(x), std::move(a), std::move(y),
                         std::vector<bool>(static_cast<std::size_t>(n1 + n0), true), std::move(s)),
          Covariates(0, kShiftDimension)};
}

namespace {

FittedRegression fit_rows(const LabeledDataset& data, const std::vector<Index>& rows, const Eigen::VectorXd& target,
                          const BoostingOptions& options) {
  const auto m = static_cast<Index>(rows.size());
  if (m < 10) {
    double c = 0.0;
    for (Index i : rows) c += target(i);
    c = m > 0 ? c / static_cast<double>(m) : 0.0;
    return FittedRegression(RegressionFamily::boosted_stumps, 0, [c](CovRef) { return c; });
  }
  Covariates x(m, data.p());
  Eigen::VectorXd y(m);
  for (Index k = 0; k < m; ++k) {
    x.row(k) = data.covariates().row(rows[static_cast<std::size_t>(k)]);
    y(k) = target(rows[static_cast<std::size_t>(k)]);
  }
  return fit_boosted_stumps(x, y, options);
}

}  // namespace

NuisanceSet fit_threshold_nuisances(const LabeledDataset& data, const ThresholdNuisanceOptions& options) {
  std::vector<Index> all(static_cast<std::size_t>(data.n()));
  std::iota(all.begin(), all.end(), Index{0});
  const Eigen::VectorXd treated = (data.actions().array() == 1).cast<double>();
  const FittedRegression prop = fit_rows(data, all, treated, options.propensity);

  std::vector<FittedRegression> means, vars;
  for (int a : binary_actions()) {
    std::vector<Index> rows;
    for (Index i = 0; i < data.n(); ++i) {
      if (data.action(i) == a) rows.push_back(i);
    }
    means.push_back(fit_rows(data, rows, data.outcomes(), options.mean));
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(data.n());
    const auto k = static_cast<std::size_t>(options.residual_folds);
    if (k >= 2 && rows.size() >= 10 * k) {
      for (std::size_t f = 0; f < k; ++f) {
        std::vector<Index> fit, held;
        for (std::size_t j = 0; j < rows.size(); ++j) (j % k == f ? held : fit).push_back(rows[j]);
        const FittedRegression out = fit_rows(data, fit, data.outcomes(), options.mean);
        for (Index i : held) {
          const double r = data.outcome(i) - out.predict(data.x(i));
          sq(i) = r * r;
        }
      }
    } else {
      for (Index i : rows) {
        const double r = data.outcome(i) - means.back().predict(data.x(i));
        sq(i) = r * r;
      }
    }
    vars.push_back(fit_rows(data, rows, sq, options.variance));
  }
  NuisanceSet n;
  n.mu = [means](int a, CovRef x) { return means[a == 1 ? 1 : 0].predict(x); };
  n.sigma2 = [vars](int a, CovRef x) { return std::max(0.0, vars[a == 1 ? 1 : 0].predict(x)); };
  n.phi = [prop](int a, CovRef x, int) {
    const double p = std::clamp(prop.predict(x), kPropensityLow, kPropensityHigh);
    return a == 1 ? p : 1.0 - p;
  };
  return n;
}

NuisanceSet fit_shift_nuisances(const LabeledDataset& data, const SieveOptions& options) {
  NuisanceFitOptions opts;
  opts.outcome_learner = RegressionFamily::sieve_poly;
  opts.mu_source = MuSource::train;
  opts.known_propensity = 0.5;
  opts.sieve = options;
  return fit_value_nuisances(data, opts);
}

ShiftTruth shift_study_truth(bool shift, std::size_t draws, std::uint64_t seed) {
  auto rng = make_stream(seed, shift ? 1 : 0, 0x7207);
  std::normal_distribution<double> z;
  const Eigen::VectorXd mean = shift ? shift_mean() : Eigen::VectorXd::Zero(kShiftDimension);
  std::vector<double> value(draws), centered(draws);
  Eigen::VectorXd x(kShiftDimension);
  for (std::size_t d = 0; d < draws; ++d) {
    for (Index j = 0; j < kShiftDimension; ++j) x(j) = mean(j) + z(rng);
    const double c = std::abs(shift_effect(x));
    value[d] = base_mean(x) + 0.5 * c;
    centered[d] = c;
  }
  return {compensated_sum(value) / static_cast<double>(draws), compensated_sum(centered) / static_cast<double>(draws)};
}

const std::vector<std::string>& table1_columns() {
  static const std::vector<std::string> cols{"uniform", "retarget", "global", "local", "oracle"};
  return cols;
}

namespace {

double mean_of(const std::vector<double>& v) { return v.empty() ? 0.0 : compensated_sum(v) / static_cast<double>(v.size()); }

double sd_of(const std::vector<double>& v) { return std::sqrt(order_free_variance(v)); }

std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

Table1Rep table1_rep(ScenarioName scenario, const Table1Options& options, int r) {
  Table1Rep rep;
  rep.scenario = scenario;
  rep.replication = r;
  ScenarioSpec spec;
  spec.name = scenario;
  spec.n_train = options.n_train;
  spec.n_test = options.n_test;
  spec.replications = options.replications;
  spec.seed = derive_seed(options.seed, static_cast<std::uint64_t>(scenario), 0x7AB1);
  spec.nuisance_mode = options.nuisance_mode;
  try {
    const GeneratedSample sample = generate(spec, r);
    const NuisanceSet truth = true_nuisances(scenario);
    NuisanceFitter fitter;
    if (options.nuisance_mode == NuisanceMode::truth) {
      fitter = [truth](const LabeledDataset&) { return truth; };
    } else {
      const ThresholdNuisanceOptions nopts = options.nuisance;
      fitter = [nopts](const LabeledDataset& d) { return fit_threshold_nuisances(d, nopts); };
    }
    const CrossfitContext context(sample.data, CrossfitPlan::make(sample.data.n(), derive_seed(spec.seed, r, 0xF0)),
                                  fitter);
    const RegretEvaluator evaluator(sample.test, truth, WeightFn::uniform());
    const double sharp = theta_sharp(scenario);
    auto record = [&](const LearnResult& res) {
      rep.theta_hat.push_back(res.theta_hat);
      rep.regret.push_back(evaluator.regret(res.theta_hat).value);
      rep.fallbacks += res.weight_fallbacks;
    };
    for (auto recipe : {WeightRecipe::uniform, WeightRecipe::retarget, WeightRecipe::global_curvature,
                        WeightRecipe::local_curvature}) {
      const LearnResult res = crossfit_learn(context, recipe, options.crossfit);
      if (recipe == WeightRecipe::local_curvature && res.t_selected) rep.local_t = *res.t_selected;
      record(res);
    }
    const LearnResult oracle = oracle_local_learn(sample.data, fitter(sample.data), sharp, options.crossfit);
    if (oracle.t_selected) rep.oracle_t = *oracle.t_selected;
    record(oracle);
  } catch (const Error& e) {
    rep.ok = false;
    rep.error = e.what();
  }
  return rep;
}

}  // namespace

Table1Result run_table1(const Table1Options& options) {
  if (options.replications < 1) throw ConfigurationError("replications must be at least 1");
  Table1Result result;
  const auto& cols = table1_columns();
  for (ScenarioName scenario : options.scenarios) {
    if (!is_threshold_scenario(scenario)) throw ConfigurationError("table 1 runs the scalar scenarios only");
    std::vector<Table1Rep> reps(static_cast<std::size_t>(options.replications));
    parallel_for(
        reps.size(), [&](std::size_t r) { reps[r] = table1_rep(scenario, options, static_cast<int>(r)); },
        options.threads);
    const double sharp = theta_sharp(scenario);
    int failed = 0;
    int t_one = 0, t_zero = 0, ok = 0;
    std::vector<std::vector<double>> bias(cols.size()), regret(cols.size());
    for (const auto& rep : reps) {
      result.fallbacks += rep.fallbacks;
      if (!rep.ok) {
        ++failed;
        continue;
      }
      ++ok;
      if (rep.oracle_t == 1.0) ++t_one;
      if (rep.oracle_t == 0.0) ++t_zero;
      for (std::size_t c = 0; c < cols.size(); ++c) {
        bias[c].push_back(rep.theta_hat[c] - sharp);
        regret[c].push_back(rep.regret[c]);
      }
    }
    for (std::size_t c = 0; c < cols.size(); ++c) {
      Table1Cell cell;
      cell.scenario = scenario;
      cell.column = cols[c];
      cell.mean_bias = mean_of(bias[c]);
      cell.sd_bias = sd_of(bias[c]);
      cell.mean_regret = mean_of(regret[c]);
      cell.sd_regret = sd_of(regret[c]);
      cell.reps_ok = ok;
      cell.reps_failed = failed;
      result.cells.push_back(cell);
    }
    result.oracle_t_one.push_back(ok > 0 ? static_cast<double>(t_one) / ok : 0.0);
    result.oracle_t_zero.push_back(ok > 0 ? static_cast<double>(t_zero) / ok : 0.0);
    result.reps.insert(result.reps.end(), reps.begin(), reps.end());
  }
  return result;
}

namespace {

std::vector<ScenarioName> scenarios_of(const Table1Result& result) {
  std::vector<ScenarioName> out;
  for (const auto& c : result.cells) {
    if (out.empty() || out.back() != c.scenario) out.push_back(c.scenario);
  }
  return out;
}

}  // namespace

void write_table1_csv(std::ostream& out, const Table1Result& result) {
  out << "scenario,column,mean_bias,sd_bias,mean_regret,sd_regret,reps_ok,reps_failed,oracle_t1_fraction,"
         "oracle_t0_fraction\n";
  const auto scen = scenarios_of(result);
  for (const auto& c : result.cells) {
    const auto k = static_cast<std::size_t>(std::find(scen.begin(), scen.end(), c.scenario) - scen.begin());
    out << to_string(c.scenario) << ',' << c.column << ',' << format_double(c.mean_bias) << ','
        << format_double(c.sd_bias) << ',' << format_double(c.mean_regret) << ',' << format_double(c.sd_regret)
        << ',' << c.reps_ok << ',' << c.reps_failed << ',' << format_double(result.oracle_t_one[k]) << ','
        << format_double(result.oracle_t_zero[k]) << '\n';
  }
}

std::string table1_markdown(const Table1Result& result) {
  std::ostringstream md;
  const auto& cols = table1_columns();
  for (const bool regret : {false, true}) {
    md << (regret ? "\n**Regret**\n\n" : "**Estimate of theta minus theta_sharp**\n\n");
    md << "| scenario |";
    for (const auto& c : cols) md << ' ' << c << " |";
    md << "\n|---|";
    for (std::size_t c = 0; c < cols.size(); ++c) md << "---|";
    md << '\n';
    for (ScenarioName s : scenarios_of(result)) {
      md << "| " << to_string(s) << " |";
      for (const auto& c : cols) {
        const auto& cell = find_cell(result, s, c);
        md << ' ' << fixed(regret ? cell.mean_regret : cell.mean_bias) << " ("
           << fixed(regret ? cell.sd_regret : cell.sd_bias) << ") |";
      }
      md << '\n';
    }
  }
  md << "\n| scenario | oracle t = 1 | oracle t = 0 | failed reps |\n|---|---|---|---|\n";
  const auto scen = scenarios_of(result);
  for (std::size_t k = 0; k < scen.size(); ++k) {
    md << "| " << to_string(scen[k]) << " | " << fixed(result.oracle_t_one[k], 2) << " | "
       << fixed(result.oracle_t_zero[k], 2) << " | " << find_cell(result, scen[k], cols.front()).reps_failed
       << " |\n";
  }
  return md.str();
}

const Table1Cell& find_cell(const Table1Result& result, ScenarioName scenario, const std::string& column) {
  for (const auto& c : result.cells) {
    if (c.scenario == scenario && c.column == column) return c;
  }
  throw ConfigurationError("no table 1 cell for " + to_string(scenario) + "/" + column);
}

const std::vector<std::pair<std::string, std::string>>& table2_columns() {
  static const std::vector<std::pair<std::string, std::string>> cols{
      {"ipw", "V"}, {"aipw", "V"}, {"eff", "V"}, {"onlyx", "V"}, {"eff", "R"}, {"onlyx", "R"}, {"plugin", "R"}};
  return cols;
}

namespace {

struct Table2Rep {
  bool ok = true;
  std::vector<double> estimate;
};

Table2Rep table2_rep(bool shift, Index n_calib, const Table2Options& options, int r) {
  Table2Rep rep;
  ScenarioSpec spec;
  spec.name = shift ? ScenarioName::mo_shift : ScenarioName::mo_noshift;
  spec.n_train = options.n_train;
  spec.n_calib = n_calib;
  spec.replications = options.replications;
  spec.seed = derive_seed(options.seed, static_cast<std::uint64_t>(n_calib), shift ? 0x5A1F : 0x0A1F);
  try {
    const LabeledDataset data = generate(spec, r).data;
    const SieveOptions sieve = options.sieve;
    const NuisanceFitter fitter = [sieve](const LabeledDataset& d) { return fit_shift_nuisances(d, sieve); };
    const NuisanceSet full = fitter(data);
    const PolicyPtr pi = shift_study_policy();
    const LabeledDataset covariates_only = data.without_calibration_outcomes();
    rep.estimate.push_back(value_ipw(*pi, data, full).point);
    rep.estimate.push_back(value_aipw(*pi, data, full).point);
    if (options.folds > 1) {
      const auto fold = fold_assignment(data, options.folds, derive_seed(spec.seed, r, 0xF0));
      const auto fold_nuis = fit_fold_nuisances(data, fold, options.folds, fitter);
      rep.estimate.push_back(crossfit_estimate(EstimatorTag::eff, pi, data, fold, fold_nuis).point);
      rep.estimate.push_back(crossfit_estimate(EstimatorTag::onlyx, pi, covariates_only, fold, fold_nuis).point);
      rep.estimate.push_back(crossfit_estimate(EstimatorTag::eff, pi, data, fold, fold_nuis, true).point);
      rep.estimate.push_back(crossfit_estimate(EstimatorTag::onlyx, pi, covariates_only, fold, fold_nuis, true).point);
    } else {
      rep.estimate.push_back(value_eff(*pi, data, full).point);
      rep.estimate.push_back(value_onlyx(*pi, covariates_only, full).point);
      rep.estimate.push_back(centered_eff(pi, data, full).point);
      rep.estimate.push_back(centered_onlyx(pi, covariates_only, full).point);
    }
    const FittedRegression cate = fit_cate_signal(data, full, options.boosting);
    rep.estimate.push_back(
        centered_value_plugin(*pi, data.covariates_of_site(kCalibrationSite), [cate](CovRef x) {
          return cate.predict(x);
        }).point);
  } catch (const Error&) {
    rep.ok = false;
  }
  return rep;
}

}  // namespace

Table2Result run_table2(const Table2Options& options) {
  if (options.replications < 1) throw ConfigurationError("replications must be at least 1");
  Table2Result result;
  const auto& cols = table2_columns();
  std::uint64_t cell_index = 0;
  for (const bool shift : options.shifts) {
    const ShiftTruth truth = shift_study_truth(shift, options.truth_draws);
    result.truths.push_back(truth);
    for (const Index n_calib : options.n_calib) {
      std::vector<Table2Rep> reps(static_cast<std::size_t>(options.replications));
      parallel_for(
          reps.size(), [&](std::size_t r) { reps[r] = table2_rep(shift, n_calib, options, static_cast<int>(r)); },
          options.threads);
      int failed = 0;
      std::vector<std::vector<double>> err(cols.size());
      for (const auto& rep : reps) {
        if (!rep.ok) {
          ++failed;
          continue;
        }
        for (std::size_t c = 0; c < cols.size(); ++c) {
          err[c].push_back(rep.estimate[c] - (cols[c].second == "V" ? truth.value : truth.centered));
        }
      }
      for (std::size_t c = 0; c < cols.size(); ++c) {
        Table2Cell cell;
        cell.shift = shift;
        cell.n_calib = n_calib;
        cell.estimator = cols[c].first;
        cell.target = cols[c].second;
        cell.reps_failed = failed;
        const auto& e = err[c];
        cell.reps_ok = static_cast<int>(e.size());
        if (!e.empty()) {
          std::vector<double> sq(e.size());
          for (std::size_t k = 0; k < e.size(); ++k) sq[k] = e[k] * e[k];
          cell.mse = mean_of(sq);
          const double bias = mean_of(e);
          cell.bias2 = bias * bias;
          cell.variance = cell.mse - cell.bias2;
          auto rng = make_stream(options.seed, cell_index, 0xB007);
          std::uniform_int_distribution<std::size_t> pick(0, e.size() - 1);
          std::vector<double> boot(static_cast<std::size_t>(std::max(options.bootstrap, 1)));
          std::vector<double> draw(e.size());
          for (auto& b : boot) {
            for (auto& d : draw) d = sq[pick(rng)];
            b = mean_of(draw);
          }
          std::sort(boot.begin(), boot.end());
          const auto q = [&](double f) {
            return boot[static_cast<std::size_t>(std::floor(f * static_cast<double>(boot.size() - 1)))];
          };
          cell.mse_lo = q(0.05);
          cell.mse_hi = q(0.95);
        }
        result.cells.push_back(cell);
        ++cell_index;
      }
    }
  }
  return result;
}

void write_table2_csv(std::ostream& out, const Table2Result& result) {
  out << "shift,n_calib,estimator,target,mse,bias2,variance,mse_lo,mse_hi,reps_ok,reps_failed\n";
  for (const auto& c : result.cells) {
    out << (c.shift ? 1 : 0) << ',' << c.n_calib << ',' << c.estimator << ',' << c.target << ','
        << format_double(c.mse) << ',' << format_double(c.bias2) << ',' << format_double(c.variance) << ','
        << format_double(c.mse_lo) << ',' << format_double(c.mse_hi) << ',' << c.reps_ok << ',' << c.reps_failed
        << '\n';
  }
}

std::string table2_markdown(const Table2Result& result) {
  std::ostringstream md;
  const auto& cols = table2_columns();
  std::vector<bool> shifts;
  std::vector<Index> sizes;
  for (const auto& c : result.cells) {
    if (std::find(shifts.begin(), shifts.end(), c.shift) == shifts.end()) shifts.push_back(c.shift);
    if (std::find(sizes.begin(), sizes.end(), c.n_calib) == sizes.end()) sizes.push_back(c.n_calib);
  }
  for (const bool shift : shifts) {
    md << (shift ? "\n**Shift**\n\n" : "**No shift**\n\n");
    md << "| n_calib |";
    for (const auto& [est, target] : cols) md << ' ' << est << " (" << target << ") |";
    md << "\n|---|";
    for (std::size_t c = 0; c < cols.size(); ++c) md << "---|";
    md << '\n';
    for (const Index n : sizes) {
      md << "| " << n << " |";
      for (const auto& [est, target] : cols) md << ' ' << fixed(find_cell(result, shift, n, est, target).mse) << " |";
      md << '\n';
    }
  }
  return md.str();
}

const Table2Cell& find_cell(const Table2Result& result, bool shift, Index n_calib, const std::string& estimator,
                            const std::string& target) {
  for (const auto& c : result.cells) {
    if (c.shift == shift && c.n_calib == n_calib && c.estimator == estimator && c.target == target) return c;
  }
  throw ConfigurationError("no table 2 cell for " + estimator + "/" + target);
}

}  // namespace covshift
