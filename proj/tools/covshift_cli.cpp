#include "covshift/dro.hpp"
#include "covshift/estimators.hpp"
#include "covshift/harness.hpp"
#include "covshift/io.hpp"
#include "covshift/policylearn.hpp"
#include "covshift/retarget.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace covshift;
using nlohmann::json;

namespace {

std::string dataset_header(Index p) {
  std::string h;
  for (Index j = 0; j < p; ++j) h += "x" + std::to_string(j + 1) + ",";
  return h;
}

std::vector<double> first_coordinates(const Covariates& x) {
  std::vector<double> out(static_cast<std::size_t>(x.rows()));
  for (Index i = 0; i < x.rows(); ++i) out[static_cast<std::size_t>(i)] = x(i, 0);
  return out;
}

// Nuisances either from a named scenario's truth or boosted fits on the data.
NuisanceSet threshold_nuisances(const LabeledDataset& data, const std::string& scenario) {
  if (!scenario.empty()) return true_nuisances(parse_scenario(scenario));
  return fit_threshold_nuisances(data);
}

double parse_number(const std::string& s) {
  if (s == "inf" || s == "infinity") return kInfinityOrder;
  std::size_t used = 0;
  const double v = std::stod(s, &used);
  if (used != s.size()) throw ConfigurationError("cannot parse number '" + s + "'");
  return v;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number(item));
  return out;
}

// theta=VAL, or a JSON file {"theta": v} or {"intercept": b, "coefficients": [...]},
// the latter treating when b + c.x > 0.
PolicyPtr load_policy(const std::string& spec) {
  if (spec.rfind("theta=", 0) == 0) return std::make_shared<ThresholdPolicy>(parse_number(spec.substr(6)));
  std::ifstream in(spec);
  if (!in) throw ConfigurationError("cannot open policy file " + spec);
  const json j = json::parse(in);
  if (j.contains("theta")) return std::make_shared<ThresholdPolicy>(j.at("theta").get<double>());
  const auto coef = j.at("coefficients").get<std::vector<double>>();
  const double b = j.value("intercept", 0.0);
  Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(coef.data(), static_cast<Index>(coef.size()));
  return std::make_shared<RulePolicy>([c, b](CovRef x) {
    if (x.size() != c.size()) throw ConfigurationError("policy coefficients do not match covariate dimension");
    return b + c.dot(x) > 0.0 ? 1 : -1;
  });
}

// CSV x1..xp,mass.
DiscretizedDistribution load_discrete(const std::string& path) {
  const CsvTable t = read_csv(path);
  if (t.header.empty() || t.header.back() != "mass") throw InvalidDataError("nu file must end with a mass column");
  const auto p = static_cast<Index>(t.header.size() - 1);
  Covariates pts(static_cast<Index>(t.rows.size()), p);
  Eigen::VectorXd mass(static_cast<Index>(t.rows.size()));
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (Index j = 0; j < p; ++j) pts(static_cast<Index>(r), j) = std::stod(t.rows[r][static_cast<std::size_t>(j)]);
    mass(static_cast<Index>(r)) = std::stod(t.rows[r].back());
  }
  return {pts, mass};
}

void write_weights(std::ostream& out, const Covariates& x, const WeightFn& w) {
  out << (x.cols() == 1 ? std::string("x") : dataset_header(x.cols()).substr(0, dataset_header(x.cols()).size() - 1))
      << ",w\n";
  for (Index i = 0; i < x.rows(); ++i) {
    for (Index j = 0; j < x.cols(); ++j) out << format_double(x(i, j)) << ',';
    out << format_double(w(row(x, i))) << '\n';
  }
}

struct WeightsArgs {
  std::string data, constraint = "l1", nu = "train", nu_file, theta_sharp = "estimate", scenario, out;
  std::size_t t_grid = 101;
  double derivative_step = 0.0;
};

int run_weights(const WeightsArgs& a) {
  const LabeledDataset data = read_dataset_csv(a.data);
  const NuisanceSet nuis = threshold_nuisances(data, a.scenario);
  const Population pop(data.covariates());
  ClipStats clips;
  WeightFn w = WeightFn::uniform();
  auto theta = [&]() {
    if (a.theta_sharp != "estimate") return parse_number(a.theta_sharp);
    return learn_threshold(WeightFn::uniform(), data, nuis, threshold_grid(data.covariates())).theta;
  };
  std::optional<double> t;
  if (a.constraint == "l1") {
    if (a.nu == "train") {
      w = weight_retargeting(pop, nuis, &clips);
    } else if (a.nu == "uniform") {
      if (data.p() != 1) throw ConfigurationError("--nu uniform needs scalar covariates");
      const double lo = data.covariates().col(0).minCoeff();
      const double width = data.covariates().col(0).maxCoeff() - lo;
      const KernelDensity density(first_coordinates(data.covariates()));
      w = weight_l1(pop, nuis, [&](CovRef x) { return 1.0 / (width * density(x(0))); }, &clips);
    } else if (a.nu == "file") {
      w = weight_l1(DiscretizedDistribution::empirical(data.covariates()), nuis, load_discrete(a.nu_file), &clips);
    } else {
      throw ConfigurationError("--nu must be train, uniform or file");
    }
  } else if (a.constraint == "global") {
    w = weight_global_curvature(pop, nuis, &clips);
  } else if (a.constraint == "local") {
    if (data.p() != 1) throw ConfigurationError("local constraint needs scalar covariates");
    const KernelDensity density(first_coordinates(data.covariates()));
    LocalCurvatureOptions opts;
    opts.t_grid = linspace(0.0, 1.0, a.t_grid);
    opts.derivative_step = a.derivative_step > 0.0 ? a.derivative_step : (a.scenario.empty() ? 0.4 : 0.0);
    auto res = weight_local_curvature(theta(), pop, nuis, [&](double x) { return density(x); }, opts);
    w = res.weight;
    t = res.t;
  } else {
    throw ConfigurationError("--constraint must be l1, global or local");
  }
  if (a.out.empty()) {
    write_weights(std::cout, data.covariates(), w);
  } else {
    std::ofstream out(a.out);
    write_weights(out, data.covariates(), w);
  }
  if (clips.clipped > 0) std::cerr << "clipped ratio evaluations: " << clips.clipped << "/" << clips.total << "\n";
  if (t) std::cerr << "selected t: " << *t << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string data, estimator = "eff", policy = "theta=0", mu_source = "train", learner = "sieve";
  int crossfit = 2;
  bool centered = false;
  std::uint64_t seed = 0;
  double propensity = std::numeric_limits<double>::quiet_NaN();
};

int run_evaluate(const EvaluateArgs& a) {
  const LabeledDataset data = read_dataset_csv(a.data);
  const EstimatorTag tag = parse_estimator(a.estimator);
  const PolicyPtr pi = load_policy(a.policy);
  NuisanceFitOptions opts;
  opts.mu_source = parse_mu_source(a.mu_source);
  if (a.learner == "boost") {
    opts.outcome_learner = RegressionFamily::boosted_stumps;
  } else if (a.learner != "sieve") {
    throw ConfigurationError("--learner must be sieve or boost");
  }
  if (!std::isnan(a.propensity)) opts.known_propensity = a.propensity;
  const NuisanceFitter fitter = [opts](const LabeledDataset& d) { return fit_value_nuisances(d, opts); };
  ValueEstimate est;
  if (tag == EstimatorTag::plugin) {
    NuisanceSet nuis = fitter(data);
    const FittedRegression cate = fit_cate_signal(data, nuis);
    nuis.cate = [cate](CovRef x) { return cate.predict(x); };
    est = estimate(tag, pi, data, nuis, true);
  } else if (a.crossfit > 1 && (tag == EstimatorTag::eff || tag == EstimatorTag::onlyx)) {
    est = crossfit_estimate(tag, pi, data, fitter, a.crossfit, a.seed, a.centered);
  } else {
    est = estimate(tag, pi, data, fitter(data), a.centered);
  }
  json out{{"point", est.point},
           {"if_variance", est.if_variance ? json(*est.if_variance) : json(nullptr)},
           {"n_used", est.n_used},
           {"clipped_fraction", est.clipped_fraction},
           {"estimator", to_string(est.tag)}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct DroArgs {
  std::string data, k = "2", c = "1,1.2,1.5,2,3,5", center = "train", emit_set, set_center = "1/3,1/3,1/3";
  std::size_t theta_grid = 201;
  std::size_t set_points = 360;
};

std::vector<double> parse_fractions(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto slash = item.find('/');
    out.push_back(slash == std::string::npos ? parse_number(item)
                                             : parse_number(item.substr(0, slash)) / parse_number(item.substr(slash + 1)));
  }
  return out;
}

int run_dro(const DroArgs& a) {
  const double k = parse_number(a.k);
  const auto radii = parse_list(a.c);
  if (!a.emit_set.empty()) {
    const auto center = parse_fractions(a.set_center);
    if (center.size() != 3) throw ConfigurationError("--set-center needs three masses");
    std::ofstream out(a.emit_set);
    out << "c,q1,q2,q3\n";
    for (double c : radii) {
      const Eigen::MatrixXd b = uncertainty_set_boundary(Eigen::Vector3d(center[0], center[1], center[2]), k, c,
                                                         a.set_points);
      for (Index i = 0; i < b.rows(); ++i) {
        out << format_double(c) << ',' << format_double(b(i, 0)) << ',' << format_double(b(i, 1)) << ','
            << format_double(b(i, 2)) << '\n';
      }
    }
  }
  if (a.data.empty()) return 0;
  const LabeledDataset data = read_dataset_csv(a.data);
  NuisanceFitOptions opts;
  opts.outcome_learner = RegressionFamily::boosted_stumps;
  const NuisanceSet nuis = fit_value_nuisances(data, opts);
  const FittedRegression cate = fit_cate_signal(data, nuis);
  Covariates center;
  if (a.center == "train") {
    center = data.covariates_of_site(kTrainingSite);
  } else if (a.center == "calib") {
    center = data.covariates_of_site(kCalibrationSite);
  } else {
    throw ConfigurationError("--center must be train or calib");
  }
  if (center.rows() == 0) throw MissingDataError("no covariates at the requested center site");
  const auto grid =
      linspace(center.col(0).minCoeff(), center.col(0).maxCoeff(), std::max<std::size_t>(a.theta_grid, 2));
  std::cout << "c,theta_hat,worst_case_value\n";
  for (double c : radii) {
    const auto res = dro_learn_threshold(grid, [&cate](CovRef x) { return cate.predict(x); }, center, k, c);
    std::cout << format_double(c) << ',' << format_double(res.theta) << ',' << format_double(res.worst_case_value)
              << '\n';
  }
  return 0;
}

struct LearnArgs {
  std::string data, scenario, weight = "uniform", nuisance = "fitted";
  bool crossfit = false;
  double oracle_theta = std::numeric_limits<double>::quiet_NaN();
  std::uint64_t seed = 1;
  Index n = 500, n_test = 20000;
};

int run_learn(const LearnArgs& a) {
  std::optional<GeneratedSample> sample;
  std::optional<ScenarioName> scenario;
  if (!a.scenario.empty()) {
    scenario = parse_scenario(a.scenario);
    if (!is_threshold_scenario(*scenario)) throw ConfigurationError("learn needs a threshold scenario");
  }
  LabeledDataset data = [&]() {
    if (!a.data.empty()) return read_dataset_csv(a.data);
    if (!scenario) throw ConfigurationError("give --data or --scenario");
    ScenarioSpec spec;
    spec.name = *scenario;
    spec.n_train = a.n;
    spec.n_test = a.n_test;
    spec.replications = 1;
    spec.seed = a.seed;
    sample = generate(spec, 0);
    return sample->data;
  }();
  NuisanceFitter fitter;
  if (a.nuisance == "truth") {
    if (!scenario) throw ConfigurationError("--nuisance truth needs --scenario");
    const NuisanceSet truth = true_nuisances(*scenario);
    fitter = [truth](const LabeledDataset&) { return truth; };
  } else if (a.nuisance == "fitted") {
    fitter = [](const LabeledDataset& d) { return fit_threshold_nuisances(d); };
  } else {
    throw ConfigurationError("--nuisance must be truth or fitted");
  }
  const WeightRecipe recipe = parse_weight_recipe(a.weight);
  LearnResult res;
  if (!std::isnan(a.oracle_theta)) {
    res = oracle_local_learn(data, fitter(data), a.oracle_theta);
  } else if (a.crossfit) {
    res = crossfit_learn(data, recipe, fitter, a.seed);
  } else {
    res = full_sample_learn(data, recipe, fitter(data));
  }
  json out{{"theta_hat", res.theta_hat},
           {"t_selected", res.t_selected ? json(*res.t_selected) : json(nullptr)},
           {"weight_fallbacks", res.weight_fallbacks}};
  if (scenario) {
    Covariates test = sample ? sample->test : Covariates();
    if (!sample) {
      ScenarioSpec spec;
      spec.name = *scenario;
      spec.n_test = a.n_test;
      spec.seed = a.seed;
      test = generate(spec, 0).test;
    }
    const Regret r = RegretEvaluator(test, true_nuisances(*scenario), WeightFn::uniform()).regret(res.theta_hat);
    out["regret"] = r.value;
    out["regret_se"] = r.se;
  } else {
    out["regret"] = nullptr;
  }
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct SimulateArgs {
  int table = 1;
  std::string scenario, out, config, mu_source;
  int reps = 0;
  std::uint64_t seed = 1;
  bool full_scale = false;
  unsigned threads = 0;
};

void read_boosting(const json& j, BoostingOptions& b) {
  b.trees = j.value("trees", b.trees);
  b.depth = j.value("depth", b.depth);
  b.shrinkage = j.value("shrinkage", b.shrinkage);
  b.min_leaf = j.value("min_leaf", b.min_leaf);
  b.subsample = j.value("subsample", b.subsample);
  b.cv_folds = j.value("cv_folds", b.cv_folds);
}

void emit(const std::string& out_path, const std::function<void(std::ostream&)>& csv, const std::string& md) {
  if (out_path.empty()) {
    csv(std::cout);
    std::cout << "\n" << md;
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw ConfigurationError("cannot write " + out_path);
  csv(out);
  const auto dot = out_path.find_last_of('.');
  const std::string md_path = (dot == std::string::npos ? out_path : out_path.substr(0, dot)) + ".md";
  std::ofstream(md_path) << md;
  std::cerr << "wrote " << out_path << " and " << md_path << "\n";
}

int run_simulate(const SimulateArgs& a) {
  json cfg = json::object();
  if (!a.config.empty()) {
    std::ifstream in(a.config);
    if (!in) throw ConfigurationError("cannot open config " + a.config);
    cfg = json::parse(in);
  }
  if (a.table == 1) {
    Table1Options o;
    if (a.full_scale) {
      o.n_train = 2000;
      o.n_test = 100000;
      o.replications = 5000;
    }
    o.n_train = cfg.value("n_train", o.n_train);
    o.n_test = cfg.value("n_test", o.n_test);
    o.replications = cfg.value("replications", o.replications);
    o.seed = cfg.value("seed", a.seed);
    if (cfg.contains("scenarios")) {
      o.scenarios.clear();
      for (const auto& s : cfg["scenarios"]) o.scenarios.push_back(parse_scenario(s.get<std::string>()));
    }
    if (cfg.contains("nuisance_mode")) {
      o.nuisance_mode = cfg["nuisance_mode"].get<std::string>() == "truth" ? NuisanceMode::truth : NuisanceMode::fitted;
    }
    if (cfg.contains("boosting")) {
      for (auto* b : {&o.nuisance.mean, &o.nuisance.propensity, &o.nuisance.variance}) read_boosting(cfg["boosting"], *b);
    }
    if (cfg.contains("mean_boosting")) read_boosting(cfg["mean_boosting"], o.nuisance.mean);
    if (cfg.contains("propensity_boosting")) read_boosting(cfg["propensity_boosting"], o.nuisance.propensity);
    if (cfg.contains("variance_boosting")) read_boosting(cfg["variance_boosting"], o.nuisance.variance);
    o.crossfit.derivative_step = cfg.value("derivative_step", o.crossfit.derivative_step);
    if (!a.scenario.empty()) o.scenarios = {parse_scenario(a.scenario)};
    if (a.reps > 0) o.replications = a.reps;
    if (a.seed != 1) o.seed = a.seed;
    o.threads = a.threads;
    const Table1Result r = run_table1(o);
    emit(a.out, [&](std::ostream& s) { write_table1_csv(s, r); }, table1_markdown(r));
    if (r.fallbacks > 0) std::cerr << "weight fallbacks to uniform: " << r.fallbacks << "\n";
    return 0;
  }
  if (a.table != 2) throw ConfigurationError("--table must be 1 or 2");
  Table2Options o;
  if (a.full_scale) o.replications = 1000;
  o.n_train = cfg.value("n_train", o.n_train);
  o.replications = cfg.value("replications", o.replications);
  o.seed = cfg.value("seed", a.seed);
  if (cfg.contains("n_calib")) o.n_calib = cfg["n_calib"].get<std::vector<Index>>();
  if (cfg.contains("shifts")) o.shifts = cfg["shifts"].get<std::vector<bool>>();
  o.folds = cfg.value("folds", o.folds);
  o.truth_draws = cfg.value("truth_draws", o.truth_draws);
  o.bootstrap = cfg.value("bootstrap", o.bootstrap);
  if (cfg.contains("sieve_degrees")) o.sieve.degrees = cfg["sieve_degrees"].get<std::vector<int>>();
  if (cfg.contains("boosting")) read_boosting(cfg["boosting"], o.boosting);
  if (!a.scenario.empty()) {
    const ScenarioName s = parse_scenario(a.scenario);
    if (is_threshold_scenario(s)) throw ConfigurationError("table 2 runs mo_noshift or mo_shift");
    o.shifts = {s == ScenarioName::mo_shift};
  }
  if (!a.mu_source.empty() && parse_mu_source(a.mu_source) != MuSource::train) {
    throw ConfigurationError("the shift study fits outcome regressions on training rows");
  }
  if (a.reps > 0) o.replications = a.reps;
  if (a.seed != 1) o.seed = a.seed;
  o.threads = a.threads;
  const Table2Result r = run_table2(o);
  emit(a.out, [&](std::ostream& s) { write_table2_csv(s, r); }, table2_markdown(r));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retargeted policy learning and covariate-shift policy evaluation"};
  app.require_subcommand(1);

  WeightsArgs wa;
  auto* weights = app.add_subcommand("weights", "Retargeting weights evaluated on a sample");
  weights->add_option("--data", wa.data, "Dataset CSV")->required();
  weights->add_option("--constraint", wa.constraint, "l1, global or local")->check(CLI::IsMember({"l1", "global", "local"}));
  weights->add_option("--nu", wa.nu, "train, uniform or file")->check(CLI::IsMember({"train", "uniform", "file"}));
  weights->add_option("--nu-file", wa.nu_file, "CSV x1..xp,mass for --nu file");
  weights->add_option("--t-grid", wa.t_grid, "Interpolation grid size");
  weights->add_option("--theta-sharp", wa.theta_sharp, "Curvature location, or 'estimate'");
  weights->add_option("--scenario", wa.scenario, "Use this scenario's true nuisances");
  weights->add_option("--derivative-step", wa.derivative_step, "Half-width of the slope window for C'");
  weights->add_option("--out", wa.out, "Output CSV (default stdout)");

  EvaluateArgs ea;
  auto* evaluate = app.add_subcommand("evaluate", "Policy value under covariate shift");
  evaluate->add_option("--data", ea.data, "Dataset CSV with site column")->required();
  evaluate->add_option("--estimator", ea.estimator, "ipw, aipw, eff, onlyx or plugin")
      ->check(CLI::IsMember({"ipw", "aipw", "eff", "onlyx", "plugin"}));
  evaluate->add_option("--policy", ea.policy, "theta=VAL or a JSON policy file");
  evaluate->add_option("--crossfit", ea.crossfit, "Folds for eff/onlyx nuisances (1 = none)");
  evaluate->add_option("--mu-source", ea.mu_source, "train, calib or pooled");
  evaluate->add_option("--learner", ea.learner, "Outcome learner: sieve or boost");
  evaluate->add_option("--propensity", ea.propensity, "Known P(A=1|x)");
  evaluate->add_flag("--centered", ea.centered, "Estimate V(pi) - V(complement)");
  evaluate->add_option("--seed", ea.seed, "Fold seed");

  DroArgs da;
  auto* dro = app.add_subcommand("dro", "Worst-case threshold learning over L^k balls");
  dro->add_option("--data", da.data, "Dataset CSV");
  dro->add_option("--k", da.k, "Order: 2 or inf");
  dro->add_option("--c", da.c, "Comma-separated radii");
  dro->add_option("--center", da.center, "train or calib")->check(CLI::IsMember({"train", "calib"}));
  dro->add_option("--theta-grid", da.theta_grid, "Threshold grid size");
  dro->add_option("--emit-set", da.emit_set, "Write boundary points of 3-point balls to this CSV");
  dro->add_option("--set-center", da.set_center, "Center masses for --emit-set");
  dro->add_option("--set-points", da.set_points, "Boundary points per radius");

  LearnArgs la;
  auto* learn = app.add_subcommand("learn", "Learn a threshold policy");
  learn->add_option("--data", la.data, "Dataset CSV");
  learn->add_option("--scenario", la.scenario, "Generate data from a threshold scenario");
  learn->add_option("--n", la.n, "Training size for --scenario");
  learn->add_option("--n-test", la.n_test, "Test size for regret");
  learn->add_option("--weight", la.weight, "retarget, uniform, local or global")
      ->check(CLI::IsMember({"retarget", "uniform", "local", "global"}));
  learn->add_option("--nuisance", la.nuisance, "truth or fitted");
  learn->add_flag("--crossfit", la.crossfit, "Two-fold cross-fitting");
  learn->add_option("--oracle-theta", la.oracle_theta, "Local weight at this theta, no cross-fitting");
  learn->add_option("--seed", la.seed, "Seed");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Replicate the simulation tables");
  simulate->add_option("--table", sa.table, "1 or 2")->check(CLI::IsMember({1, 2}));
  simulate->add_option("--scenario", sa.scenario, "Restrict to one scenario");
  simulate->add_option("--reps", sa.reps, "Replications");
  simulate->add_option("--seed", sa.seed, "Master seed");
  simulate->add_option("--out", sa.out, "Output CSV; the Markdown table goes next to it");
  simulate->add_option("--config", sa.config, "JSON config");
  simulate->add_flag("--full-scale", sa.full_scale, "Large run: 5000 reps at n=2000 (table 1), 1000 reps (table 2)");
  simulate->add_option("--mu-source", sa.mu_source, "Outcome regression source (train only)");
  simulate->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*weights) return run_weights(wa);
    if (*evaluate) return run_evaluate(ea);
    if (*dro) return run_dro(da);
    if (*learn) return run_learn(la);
    if (*simulate) return run_simulate(sa);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  return 0;
}
