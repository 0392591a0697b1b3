// Command line front end: simulate, cv, estimate, predict, fpca.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cate/error.hpp"
#include "cate/parallel.hpp"
#include "cate/pipeline.hpp"
#include "cate/serialize.hpp"
#include "cate/simulator.hpp"
#include "cate/tuning.hpp"

namespace fs = std::filesystem;
using namespace cate;

namespace {

//! Everything a run depends on except the thread count. Serialized into
//! every JSON artifact.
struct RunConfig {
  std::string command;
  std::string input;
  std::string design = "within";
  std::string sampling = "dense";
  std::string target_site;
  std::string sparse_density = "gaussian";

  int grid_points = 16;
  double grid_trim = 0.025;
  std::vector<double> grid_lower, grid_upper;
  std::string weight_density = "pooled_gaussian";

  std::string kernel = "gaussian";
  double h_mu = 0.3;
  double h_H = 0.3;
  double mass_factor = 10.0;
  double a = 0.1;
  int K = 4;
  double rank_tol = 1e-12;
  double psd_tol = 1e-8;

  std::vector<double> h_mu_grid, h_H_grid, a_grid;
  //! Non-empty: bandwidth grids are these multiples of the rate-rule h.
  std::vector<double> rate_multipliers;
  int K_cv = 2;
  std::vector<int> K_grid;
  std::string cv_loss = "held_out_outcomes";
  double tie_tol = 1e-9;
  //! estimate: take h_mu, h_H and a from this CV report.
  std::string cv_report;

  //! predict: directory written by estimate.
  std::string estimate_dir;
  std::vector<int> K_use;
  bool score_factor = true;
  //! predict: JSON object mapping site id to study label.
  std::string grouping;
  //! fpca: population artifact written by simulate, for oracle IMSE.
  std::string truth;

  //! simulate
  std::string population;
  json population_config;
  int n = 200;
  double share_treated = 0.5;
  int target = -1;

  std::string out = "out";
  std::uint64_t seed = 0;
};

json to_json(const RunConfig& c) {
  json j = {{"command", c.command},
            {"input", c.input},
            {"design", c.design},
            {"sampling", c.sampling},
            {"target_site", c.target_site},
            {"sparse_density", c.sparse_density},
            {"grid_points", c.grid_points},
            {"grid_trim", c.grid_trim},
            {"grid_lower", c.grid_lower},
            {"grid_upper", c.grid_upper},
            {"weight_density", c.weight_density},
            {"kernel", c.kernel},
            {"h_mu", c.h_mu},
            {"h_H", c.h_H},
            {"mass_factor", c.mass_factor},
            {"a", c.a},
            {"K", c.K},
            {"rank_tol", c.rank_tol},
            {"psd_tol", c.psd_tol},
            {"h_mu_grid", c.h_mu_grid},
            {"h_H_grid", c.h_H_grid},
            {"a_grid", c.a_grid},
            {"rate_multipliers", c.rate_multipliers},
            {"K_cv", c.K_cv},
            {"K_grid", c.K_grid},
            {"cv_loss", c.cv_loss},
            {"tie_tol", c.tie_tol},
            {"cv_report", c.cv_report},
            {"estimate_dir", c.estimate_dir},
            {"K_use", c.K_use},
            {"score_factor", c.score_factor},
            {"grouping", c.grouping},
            {"truth", c.truth},
            {"population", c.population},
            {"n", c.n},
            {"share_treated", c.share_treated},
            {"target", c.target},
            {"out", c.out},
            {"seed", c.seed}};
  if (!c.population_config.is_null()) j["population_config"] = c.population_config;
  return j;
}

template <class T>
void take(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  if (auto it = j.find(key); it != j.end()) {
    it->get_to(out);
    seen.insert(key);
  }
}

// Keys present in the config file override the flags.
void merge(RunConfig& c, const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config file must hold a JSON object");
  std::set<std::string> seen;
  take(j, "input", c.input, seen);
  take(j, "design", c.design, seen);
  take(j, "sampling", c.sampling, seen);
  take(j, "target_site", c.target_site, seen);
  take(j, "sparse_density", c.sparse_density, seen);
  take(j, "grid_points", c.grid_points, seen);
  take(j, "grid_trim", c.grid_trim, seen);
  take(j, "grid_lower", c.grid_lower, seen);
  take(j, "grid_upper", c.grid_upper, seen);
  take(j, "weight_density", c.weight_density, seen);
  take(j, "kernel", c.kernel, seen);
  take(j, "h_mu", c.h_mu, seen);
  take(j, "h_H", c.h_H, seen);
  take(j, "mass_factor", c.mass_factor, seen);
  take(j, "a", c.a, seen);
  take(j, "K", c.K, seen);
  take(j, "rank_tol", c.rank_tol, seen);
  take(j, "psd_tol", c.psd_tol, seen);
  take(j, "h_mu_grid", c.h_mu_grid, seen);
  take(j, "h_H_grid", c.h_H_grid, seen);
  take(j, "a_grid", c.a_grid, seen);
  take(j, "rate_multipliers", c.rate_multipliers, seen);
  take(j, "K_cv", c.K_cv, seen);
  take(j, "K_grid", c.K_grid, seen);
  take(j, "cv_loss", c.cv_loss, seen);
  take(j, "tie_tol", c.tie_tol, seen);
  take(j, "cv_report", c.cv_report, seen);
  take(j, "estimate_dir", c.estimate_dir, seen);
  take(j, "K_use", c.K_use, seen);
  take(j, "score_factor", c.score_factor, seen);
  take(j, "grouping", c.grouping, seen);
  take(j, "truth", c.truth, seen);
  take(j, "population", c.population, seen);
  take(j, "population_config", c.population_config, seen);
  take(j, "n", c.n, seen);
  take(j, "share_treated", c.share_treated, seen);
  take(j, "target", c.target, seen);
  take(j, "out", c.out, seen);
  take(j, "seed", c.seed, seen);
  for (const auto& [key, value] : j.items())
    if (!seen.count(key) && key != "schema_version" && key != "command")
      throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidConfig, what);
}

void validate(const RunConfig& c) {
  design_from_string(c.design);
  sampling_from_string(c.sampling);
  density_family_from_string(c.sparse_density);
  weight_density_from_string(c.weight_density);
  kernel_family_from_string(c.kernel);
  cv_loss_from_string(c.cv_loss);
  require(c.grid_points >= 4, "grid_points must be at least 4");
  require(c.grid_trim >= 0.0 && c.grid_trim < 0.5, "grid_trim must lie in [0, 0.5)");
  require(c.grid_lower.size() == c.grid_upper.size(), "grid_lower and grid_upper must have the same length");
  require(c.h_mu > 0.0 && c.h_H > 0.0, "bandwidths must be positive");
  require(c.mass_factor >= 0.0, "mass_factor must be nonnegative");
  require(c.K >= 0, "K must be nonnegative");
  require(c.rank_tol >= 0.0 && c.psd_tol >= 0.0, "tolerances must be nonnegative");
  require(c.K_cv >= 1, "K_cv must be positive");
  require(c.tie_tol >= 0.0, "tie_tol must be nonnegative");
  require(c.n >= 2, "n must be at least 2");
  require(c.share_treated >= 0.0 && c.share_treated <= 1.0, "share_treated must lie in [0, 1]");
  for (double m : c.rate_multipliers) require(m > 0.0, "rate multipliers must be positive");
  for (int k : c.K_use) require(k >= 0, "K_use values must be nonnegative");
  if (c.command == "simulate") {
    require(!c.population.empty() || !c.population_config.is_null(), "simulate needs --population or population_config");
  } else if (c.command == "predict") {
    require(!c.estimate_dir.empty(), "predict needs --estimate-dir");
  } else {
    require(!c.input.empty(), c.command + " needs --input");
  }
  if (c.command == "cv" && c.rate_multipliers.empty())
    require(!c.h_mu_grid.empty() && !c.h_H_grid.empty(), "cv needs --h-mu-grid and --h-H-grid, or --rate-multipliers");
  if (c.command == "cv") require(!c.a_grid.empty(), "cv needs --a-grid");
}

json stamp(const RunConfig& c, json artifact) {
  artifact["schema_version"] = kSchemaVersion;
  artifact["run_config"] = to_json(c);
  artifact["seed"] = c.seed;
  return artifact;
}

fs::path out_path(const RunConfig& c, const std::string& name) { return fs::path(c.out) / name; }

void warn(const std::string& msg) { std::cerr << "warning: " << msg << "\n"; }

Dataset load_dataset(const RunConfig& c) {
  CsvSchema schema;
  schema.design = design_from_string(c.design);
  schema.sampling = sampling_from_string(c.sampling);
  schema.sparse_density = density_family_from_string(c.sparse_density);
  if (!c.target_site.empty()) schema.target_site = c.target_site;
  return ingest_csv(c.input, schema);
}

GridSettings grid_settings(const RunConfig& c) {
  GridSettings g;
  g.points_per_dim = c.grid_points;
  g.trim = c.grid_trim;
  g.weight = weight_density_from_string(c.weight_density);
  if (!c.grid_lower.empty()) {
    Bounds b;
    for (std::size_t i = 0; i < c.grid_lower.size(); ++i) b.emplace_back(c.grid_lower[i], c.grid_upper[i]);
    g.bounds = b;
  }
  return g;
}

KernelSpec kernel(const RunConfig& c, double h) {
  KernelSpec k;
  k.family = kernel_family_from_string(c.kernel);
  k.h = h;
  k.mass_factor = c.mass_factor;
  return k;
}

BasisOptions basis_options(const RunConfig& c) {
  BasisOptions o;
  o.rank_tol = c.rank_tol;
  o.psd_tol = c.psd_tol;
  return o;
}

PopulationConfig population_config(const RunConfig& c) {
  const json j = c.population_config.is_null() ? read_json(c.population) : c.population_config;
  return j.get<PopulationConfig>();
}

json matrix_json(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
    a.push_back(row);
  }
  return a;
}

// ---------------------------------------------------------------- simulate

void cmd_simulate(const RunConfig& c) {
  const auto cfg = population_config(c);
  const auto pop = generate_population(cfg, c.seed);
  AssignmentProtocol proto;
  proto.design = design_from_string(c.design);
  proto.sampling = sampling_from_string(c.sampling);
  proto.share_treated = c.share_treated;
  proto.seed = c.seed;
  if (c.target >= 0) proto.target = c.target;
  const auto ds = sample_dataset(pop, c.n, proto);
  write_csv(ds, out_path(c, "dataset.csv"));

  json sites = json::array();
  for (int g = 0; g < pop.G(); ++g) sites.push_back(synthetic_site_id(g));
  write_json(stamp(c, {{"population_config", cfg},
                       {"population_seed", pop.seed},
                       {"site_ids", sites},
                       {"target_id", ds.sites[ds.target_index()].site_id},
                       {"m", matrix_json(pop.m)},
                       {"b", matrix_json(pop.b)}}),
             out_path(c, "population.json"));
  write_json(stamp(c, {{"summary", summarize(ds)}}), out_path(c, "summary.json"));
}

// ---------------------------------------------------------------------- cv

CvPlan cv_plan(const RunConfig& c, const Dataset& ds) {
  CvPlan p;
  p.h_mu_grid = c.h_mu_grid;
  p.h_H_grid = c.h_H_grid;
  p.a_grid = c.a_grid;
  p.K_cv = c.K_cv;
  p.K_grid = c.K_grid;
  p.family = kernel_family_from_string(c.kernel);
  p.loss = cv_loss_from_string(c.cv_loss);
  p.tie_tol = c.tie_tol;
  if (!c.rate_multipliers.empty()) {
    const double h = rate_rule_h(ds);
    std::vector<double> grid;
    for (double m : c.rate_multipliers) grid.push_back(m * h);
    std::sort(grid.begin(), grid.end());
    p.h_mu_grid = p.h_H_grid = grid;
  }
  return p;
}

void cmd_cv(const RunConfig& c) {
  const auto ds = load_dataset(c);
  const auto grid = build_grid(ds, grid_settings(c));
  const auto plan = cv_plan(c, ds);
  const auto report = run_cv(ds, grid, plan, basis_options(c));
  write_json(stamp(c, {{"report", report}, {"h_mu_grid", plan.h_mu_grid}, {"h_H_grid", plan.h_H_grid}}),
             out_path(c, "cv_report.json"));
}

// ---------------------------------------------------------------- estimate

struct Tuned {
  double h_mu, h_H, a;
};

Tuned tuned(const RunConfig& c) {
  if (c.cv_report.empty()) return {c.h_mu, c.h_H, c.a};
  const auto j = read_json(c.cv_report).at("report");
  return {j.at("h_mu").at("chosen").get<double>(), j.at("h_H").at("chosen").get<double>(),
          j.at("a").at("chosen").get<double>()};
}

EstimateResult estimate(const RunConfig& c, const Dataset& ds) {
  const auto t = tuned(c);
  EstimateSettings s;
  s.grid = grid_settings(c);
  s.kernel_mu = kernel(c, t.h_mu);
  s.kernel_H = kernel(c, t.h_H);
  s.a = t.a;
  s.K = c.K;
  s.basis = basis_options(c);
  auto r = run_estimate(ds, s);
  for (const auto& w : r.warnings) warn(w);
  return r;
}

void cmd_estimate(const RunConfig& c) {
  const auto ds = load_dataset(c);
  const auto r = estimate(c, ds);
  const auto t = ds.target_index();
  json units = json::array();
  for (const auto& x : baseline_units(ds, t)) units.push_back(x);

  write_json(stamp(c, {{"basis", basis_to_json(r.basis)}}), out_path(c, "basis.json"));
  json est = {{"target_id", r.target_id},
              {"spec_mu", r.spec_mu},
              {"spec_H", r.spec_H},
              {"a", r.basis.a},
              {"mu0", function_to_json(r.means.mu0)},
              {"mu1", function_to_json(r.means.mu1)},
              {"tau", function_to_json(r.means.tau)},
              {"target_mu0", function_to_json(*r.means.sites[t].mu0)},
              {"target_units", units},
              {"clamped_mass", r.clamped_mass},
              {"warnings", r.warnings},
              {"diagnostics", {{"means", r.means.diagnostics}, {"covariances", r.cov.diagnostics}}},
              {"summary", summarize(ds)}};
  write_json(stamp(c, est), out_path(c, "estimate.json"));
  json ops = {{"H_mumu", operator_to_json(r.cov.H_mumu)},
              {"H_mumu_psd", operator_to_json(r.H_mumu_psd)},
              {"H_mutau", operator_to_json(r.cov.H_mutau)}};
  if (r.cov.H_tautau) ops["H_tautau"] = operator_to_json(*r.cov.H_tautau);
  write_json(stamp(c, ops), out_path(c, "operators.json"));
}

// ----------------------------------------------------------------- predict

void cmd_predict(const RunConfig& c) {
  const fs::path dir = c.estimate_dir;
  const auto basis = basis_from_json(read_json(dir / "basis.json").at("basis"));
  const auto est = read_json(dir / "estimate.json");
  const auto& grid = basis.grid;
  const auto mu_target = function_from_json(est.at("target_mu0"), grid);
  const auto mu0 = function_from_json(est.at("mu0"), grid);
  const auto tau = function_from_json(est.at("tau"), grid);
  const auto target_id = est.at("target_id").get<std::string>();
  const auto units = est.at("target_units").get<std::vector<std::vector<double>>>();

  PredictSettings s;
  s.K_use = c.K_use;
  s.apply_factor = c.score_factor;
  const auto r = run_predict(mu_target, mu0, tau, basis, target_id, units, s);
  if (r.out_of_range) warn(std::to_string(r.out_of_range) + " target units lie outside the grid box; clamped");

  json averages = json::array();
  std::ostringstream csv;
  csv << "site,K,average_effect\n";
  for (std::size_t i = 0; i < r.predictions.size(); ++i) {
    const double v = r.site_average.at(i);
    averages.push_back({{"K", r.predictions[i].K_used}, {"average_effect", v}});
    csv << target_id << ',' << r.predictions[i].K_used << ',' << format_double(v) << '\n';
  }
  json out = {{"target_id", target_id},
              {"scores", r.scores},
              {"predictions", predictions_to_json(r.predictions)},
              {"site_average", averages},
              {"out_of_range", r.out_of_range}};
  if (!c.grouping.empty()) {
    const auto grouping = read_json(c.grouping).get<std::map<std::string, std::string>>();
    json studies = json::array();
    for (std::size_t i = 0; i < r.predictions.size(); ++i) {
      const auto agg = study_aggregate({{target_id, r.site_average[i]}}, grouping);
      for (const auto& st : agg)
        studies.push_back({{"K", r.predictions[i].K_used}, {"study", st.study}, {"mean", st.mean}, {"sites", st.sites}});
    }
    out["studies"] = studies;
  }
  write_json(stamp(c, out), out_path(c, "predictions.json"));
  write_text(csv.str(), out_path(c, "predictions.csv"));
}

// -------------------------------------------------------------------- fpca

void cmd_fpca(const RunConfig& c) {
  const auto ds = load_dataset(c);
  const auto r = estimate(c, ds);
  const auto opt = basis_options(c);
  const auto fpc = solve_fpc(r.H_mumu_psd, c.K, opt);
  if (fpc.rank_deficient) warn("RankDeficient: FPC basis truncated to " + std::to_string(fpc.eigenvalues.size()));
  const auto fpc_pred = fpc_predictor(fpc, r.cov.H_mutau);

  std::optional<OracleOperators> oracle;
  if (!c.truth.empty()) {
    const auto j = read_json(c.truth);
    const auto pop = generate_population(j.at("population_config").get<PopulationConfig>(),
                                         j.at("population_seed").get<std::uint64_t>());
    oracle = oracle_operators(pop, r.grid);
  }
  json rows = json::array();
  std::ostringstream csv;
  csv << "K,plugin_imse_optimal,plugin_imse_fpc,oracle_imse_optimal,oracle_imse_fpc\n";
  const int K = std::min(r.basis.K, fpc_pred.K);
  auto first = [](const std::vector<DiscretizedFunction>& v, int k) {
    return std::vector<DiscretizedFunction>(v.begin(), v.begin() + k);
  };
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (int k = 1; k <= K; ++k) {
    double po = nan, pf = nan, oo = nan, of = nan;
    if (r.cov.H_tautau) {
      po = plugin_imse(r.H_mumu_psd, r.cov.H_mutau, *r.cov.H_tautau, first(r.basis.phi, k));
      pf = plugin_imse(r.H_mumu_psd, r.cov.H_mutau, *r.cov.H_tautau, first(fpc_pred.phi, k));
    }
    if (oracle) {
      oo = oracle_imse(*oracle, first(r.basis.phi, k));
      of = oracle_imse(*oracle, first(fpc_pred.phi, k));
    }
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    rows.push_back({{"K", k},
                    {"plugin_imse_optimal", num(po)},
                    {"plugin_imse_fpc", num(pf)},
                    {"oracle_imse_optimal", num(oo)},
                    {"oracle_imse_fpc", num(of)}});
    csv << k << ',' << format_double(po) << ',' << format_double(pf) << ',' << format_double(oo) << ','
        << format_double(of) << '\n';
  }
  write_json(stamp(c, {{"fpc", fpc_to_json(fpc)}}), out_path(c, "fpc.json"));
  write_json(stamp(c, {{"comparison", rows}}), out_path(c, "comparison.json"));
  write_text(csv.str(), out_path(c, "comparison.csv"));
}

int exit_code(ErrorCategory c) { return static_cast<int>(c); }

int default_threads() {
  if (const char* env = std::getenv("CATE_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      warn("ignoring CATE_THREADS='" + std::string(env) + "'");
    }
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transfer estimator for conditional average treatment effects across sites"};
  app.require_subcommand(1);
  RunConfig c;
  int threads = default_threads();
  std::string config_path;
  app.add_option("--threads", threads, "Worker threads (default: CATE_THREADS or 1)")->check(CLI::PositiveNumber);
  app.add_option("--config", config_path, "JSON file whose keys override the flags");
  app.add_option("--out", c.out, "Output directory, created if missing")->capture_default_str();
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();

  auto data_flags = [&](CLI::App* s) {
    s->add_option("--input", c.input, "Unit-level CSV");
    s->add_option("--design", c.design, "within | cluster")->capture_default_str();
    s->add_option("--sampling", c.sampling, "dense | sparse")->capture_default_str();
    s->add_option("--target-site", c.target_site, "Target site id (instead of a role column)");
    s->add_option("--sparse-density", c.sparse_density, "Per-site density family for sparse sampling")
        ->capture_default_str();
    s->add_option("--grid-points", c.grid_points, "Quadrature nodes per dimension")->capture_default_str();
    s->add_option("--grid-trim", c.grid_trim, "Quantile trimmed from each side for the grid box")
        ->capture_default_str();
    s->add_option("--grid-lower", c.grid_lower, "Explicit grid box lower corner")->delimiter(',');
    s->add_option("--grid-upper", c.grid_upper, "Explicit grid box upper corner")->delimiter(',');
    s->add_option("--weight-density", c.weight_density, "pooled_gaussian | target_gaussian | uniform")
        ->capture_default_str();
    s->add_option("--kernel", c.kernel, "gaussian | epanechnikov")->capture_default_str();
    s->add_option("--mass-factor", c.mass_factor, "Minimum local mass in units of n * machine epsilon")
        ->capture_default_str();
    s->add_option("--rank-tol", c.rank_tol, "Eigenvalues below rank_tol * lambda_1 are dropped")
        ->capture_default_str();
    s->add_option("--psd-tol", c.psd_tol, "Most negative eigenvalue of T_mumu tolerated")->capture_default_str();
  };
  auto estimate_flags = [&](CLI::App* s) {
    s->add_option("--h-mu", c.h_mu, "Mean bandwidth, standardized units")->capture_default_str();
    s->add_option("--h-H", c.h_H, "Covariance bandwidth, standardized units")->capture_default_str();
    s->add_option("--a", c.a, "Regularization, in (0, 1)")->capture_default_str();
    s->add_option("--K", c.K, "Number of basis functions")->capture_default_str();
    s->add_option("--cv-report", c.cv_report, "Take h_mu, h_H and a from this cv_report.json");
  };

  auto* sim = app.add_subcommand("simulate", "Sample a dataset from a synthetic population");
  sim->add_option("--population", c.population, "Population config JSON");
  sim->add_option("--n", c.n, "Units per site")->capture_default_str();
  sim->add_option("--design", c.design, "within | cluster")->capture_default_str();
  sim->add_option("--sampling", c.sampling, "dense | sparse")->capture_default_str();
  sim->add_option("--share-treated", c.share_treated, "Treated share of clusters (cluster design)")
      ->capture_default_str();
  sim->add_option("--target", c.target, "Target site index (default: drawn)");

  auto* cv = app.add_subcommand("cv", "Leave-one-site-out cross-validation of h_mu, h_H and a");
  data_flags(cv);
  cv->add_option("--h-mu-grid", c.h_mu_grid, "Mean bandwidth candidates")->delimiter(',');
  cv->add_option("--h-H-grid", c.h_H_grid, "Covariance bandwidth candidates")->delimiter(',');
  cv->add_option("--rate-multipliers", c.rate_multipliers, "Bandwidth grids as multiples of the rate-rule h")
      ->delimiter(',');
  cv->add_option("--a-grid", c.a_grid, "Regularization candidates")->delimiter(',');
  cv->add_option("--K-cv", c.K_cv, "K used while selecting a")->capture_default_str();
  cv->add_option("--K-grid", c.K_grid, "Select K jointly with a over these values")->delimiter(',');
  cv->add_option("--cv-loss", c.cv_loss, "held_out_outcomes | discrepancy")->capture_default_str();
  cv->add_option("--tie-tol", c.tie_tol, "Relative tolerance for tied losses")->capture_default_str();

  auto* est = app.add_subcommand("estimate", "Estimate means, covariance operators and the optimal basis");
  data_flags(est);
  estimate_flags(est);

  auto* pred = app.add_subcommand("predict", "Predict the target-site CATE from estimate artifacts");
  pred->add_option("--estimate-dir", c.estimate_dir, "Directory written by estimate");
  pred->add_option("--K-use", c.K_use, "Truncation levels (default: 0..K)")->delimiter(',');
  pred->add_flag("!--no-score-factor", c.score_factor, "Drop the (1+a)/(1-a) score factor");
  pred->add_option("--grouping", c.grouping, "JSON object: site id -> study label");

  auto* fp = app.add_subcommand("fpca", "FPC baseline and its comparison with the optimal basis");
  data_flags(fp);
  estimate_flags(fp);
  fp->add_option("--truth", c.truth, "population.json from simulate, for oracle IMSE");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    c.command = app.get_subcommands().front()->get_name();
    if (!config_path.empty()) merge(c, read_json(config_path));
    validate(c);
    set_num_threads(threads);
    std::error_code ec;
    fs::create_directories(c.out, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create output directory '" + c.out + "': " + ec.message());
    if (c.command == "simulate") cmd_simulate(c);
    if (c.command == "cv") cmd_cv(c);
    if (c.command == "estimate") cmd_estimate(c);
    if (c.command == "predict") cmd_predict(c);
    if (c.command == "fpca") cmd_fpca(c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.category());
  } catch (const json::exception& e) {
    std::cerr << "error [InvalidConfig]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
