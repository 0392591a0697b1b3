#include "cate/serialize.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "cate/error.hpp"

namespace cate {

namespace {

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v[i]));
  return a;
}

Eigen::VectorXd get_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = get_num(j[i]);
  return v;
}

json mat(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) a.push_back(vec(m.row(r).transpose()));
  return a;
}

Eigen::MatrixXd get_mat(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (static_cast<Eigen::Index>(j[r].size()) != cols) throw Error(ErrorCode::InvalidConfig, "ragged matrix");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get_num(j[r][c]);
  }
  return m;
}

template <class T>
void maybe(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) out = it->get<T>();
}

[[noreturn]] void bad(const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); }

}  // namespace

void to_json(json& j, const DensitySpec& f) {
  j = {{"family", to_string(f.family)}, {"loc", f.loc}, {"scale", f.scale}, {"lower", f.lower}, {"upper", f.upper}};
}

void from_json(const json& j, DensitySpec& f) {
  f = {};
  f.family = density_family_from_string(j.at("family").get<std::string>());
  maybe(j, "loc", f.loc);
  maybe(j, "scale", f.scale);
  maybe(j, "lower", f.lower);
  maybe(j, "upper", f.upper);
}

void to_json(json& j, const KernelSpec& k) {
  j = {{"family", to_string(k.family)}, {"h", k.h}, {"scale", k.scale}, {"mass_factor", k.mass_factor}};
}

void from_json(const json& j, KernelSpec& k) {
  k = {};
  if (auto it = j.find("family"); it != j.end()) k.family = kernel_family_from_string(it->get<std::string>());
  maybe(j, "h", k.h);
  maybe(j, "scale", k.scale);
  maybe(j, "mass_factor", k.mass_factor);
}

void to_json(json& j, const BasisOptions& o) { j = {{"rank_tol", o.rank_tol}, {"psd_tol", o.psd_tol}}; }

void from_json(const json& j, BasisOptions& o) {
  o = {};
  maybe(j, "rank_tol", o.rank_tol);
  maybe(j, "psd_tol", o.psd_tol);
}

void to_json(json& j, const QuadratureGrid& g) {
  json bounds = json::array();
  for (const auto& [lo, hi] : g.bounds) bounds.push_back({lo, hi});
  j = {{"d", g.d},
       {"points_per_dim", g.points_per_dim},
       {"bounds", bounds},
       {"f0", g.f0},
       {"nodes_1d", g.nodes_1d},
       {"points", mat(g.points)},
       {"quad_weights", vec(g.quad_weights)},
       {"f0_values", vec(g.f0_values)},
       {"weights", vec(g.weights)}};
}

GridPtr grid_from_json(const json& j) {
  auto g = std::make_shared<QuadratureGrid>();
  g->d = j.at("d").get<int>();
  g->points_per_dim = j.at("points_per_dim").get<int>();
  for (const auto& b : j.at("bounds")) g->bounds.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
  g->f0 = j.at("f0").get<DensitySpec>();
  g->nodes_1d = j.at("nodes_1d").get<std::vector<std::vector<double>>>();
  g->points = get_mat(j.at("points"));
  g->quad_weights = get_vec(j.at("quad_weights"));
  g->f0_values = get_vec(j.at("f0_values"));
  g->weights = get_vec(j.at("weights"));
  const auto m = g->points.rows();
  if (g->points.cols() != g->d || g->weights.size() != m || g->quad_weights.size() != m || g->f0_values.size() != m)
    bad("inconsistent grid arrays");
  return g;
}

void to_json(json& j, const LocalFitDiagnostics& d) {
  j = {{"effective_sample_size", num(d.effective_sample_size)},
       {"min_local_mass", num(d.min_local_mass)},
       {"degenerate_points", d.degenerate_points.size()}};
}

void to_json(json& j, const ScoreVector& s) {
  json t = json::array();
  for (double v : s.t) t.push_back(num(v));
  j = {{"site_id", s.site_id}, {"t", t}};
}

void from_json(const json& j, ScoreVector& s) {
  s.site_id = j.at("site_id").get<std::string>();
  s.t.clear();
  for (const auto& v : j.at("t")) s.t.push_back(get_num(v));
}

void to_json(json& j, const DatasetSummary& s) {
  json sites = json::array();
  for (const auto& x : s.sites) {
    json e = {{"site_id", x.site_id}, {"role", to_string(x.role)}, {"n", x.n}, {"n_treated", x.n_treated}};
    if (x.cluster_treatment) e["cluster_treatment"] = *x.cluster_treatment;
    sites.push_back(std::move(e));
  }
  json mean = json::array(), sd = json::array();
  for (double v : s.covariate_mean) mean.push_back(num(v));
  for (double v : s.covariate_sd) sd.push_back(num(v));
  j = {{"d", s.d},
       {"design", to_string(s.design)},
       {"sampling", to_string(s.sampling)},
       {"sites", sites},
       {"covariate_mean", mean},
       {"covariate_sd", sd},
       {"outcome_mean", num(s.outcome_mean)}};
}

void from_json(const json& j, DatasetSummary& s) {
  s = {};
  s.d = j.at("d").get<int>();
  s.design = design_from_string(j.at("design").get<std::string>());
  s.sampling = sampling_from_string(j.at("sampling").get<std::string>());
  for (const auto& e : j.at("sites")) {
    SiteSummary x;
    x.site_id = e.at("site_id").get<std::string>();
    x.role = e.at("role").get<std::string>() == "target" ? Role::Target : Role::Experimental;
    x.n = e.at("n").get<std::size_t>();
    x.n_treated = e.at("n_treated").get<std::size_t>();
    if (e.contains("cluster_treatment")) x.cluster_treatment = e["cluster_treatment"].get<int>();
    s.sites.push_back(std::move(x));
  }
  for (const auto& v : j.at("covariate_mean")) s.covariate_mean.push_back(get_num(v));
  for (const auto& v : j.at("covariate_sd")) s.covariate_sd.push_back(get_num(v));
  s.outcome_mean = get_num(j.at("outcome_mean"));
}

void to_json(json& j, const CvSelection& s) {
  json table = json::array();
  for (const auto& c : s.table) {
    json e = {{"value", c.value}, {"K", c.K}, {"loss", num(c.loss)}, {"failed_folds", c.failed_folds}};
    if (!c.failure.empty()) e["failure"] = c.failure;
    table.push_back(std::move(e));
  }
  j = {{"chosen", s.chosen}, {"chosen_K", s.chosen_K}, {"folds", s.folds}, {"table", table}};
}

void to_json(json& j, const CvReport& r) {
  j = {{"h_mu", r.h_mu}, {"h_H", r.h_H}, {"a", r.a}, {"folds", r.folds}, {"rate_rule_h", num(r.rate_rule_h)}};
}

void to_json(json& j, const RateTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    json errs = json::array();
    for (double v : r.H_errors) errs.push_back(num(v));
    rows.push_back({{"G", r.G},
                    {"n", r.n},
                    {"h", num(r.h)},
                    {"mu_error", num(r.mu_error)},
                    {"H_error", num(r.H_error)},
                    {"phi_error", num(r.phi_error)},
                    {"lambda_error", num(r.lambda_error)},
                    {"H_errors", errs}});
  }
  j = {{"reps", t.reps}, {"seed", t.seed}, {"rows", rows}};
}

namespace {

const char* factor_name(FactorKind k) {
  switch (k) {
    case FactorKind::Monomial:
      return "monomial";
    case FactorKind::Sin:
      return "sin";
    case FactorKind::Cos:
      return "cos";
    case FactorKind::Legendre:
      return "legendre";
  }
  return "monomial";
}

FactorKind factor_kind(const std::string& s) {
  if (s == "monomial") return FactorKind::Monomial;
  if (s == "sin") return FactorKind::Sin;
  if (s == "cos") return FactorKind::Cos;
  if (s == "legendre") return FactorKind::Legendre;
  bad("unknown factor kind '" + s + "'");
}

}  // namespace

void to_json(json& j, const AnalyticFunction& f) {
  json terms = json::array();
  for (const auto& t : f.terms) {
    json factors = json::array();
    for (const auto& x : t.factors)
      factors.push_back({{"kind", factor_name(x.kind)},
                         {"coord", x.coord},
                         {"order", x.order},
                         {"freq", x.freq},
                         {"phase", x.phase},
                         {"lo", x.lo},
                         {"hi", x.hi}});
    terms.push_back({{"coef", t.coef}, {"factors", factors}});
  }
  j = {{"terms", terms}};
}

// A bare number is a constant function.
void from_json(const json& j, AnalyticFunction& f) {
  f = {};
  if (j.is_number()) {
    f = AnalyticFunction::constant(j.get<double>());
    return;
  }
  for (const auto& t : j.at("terms")) {
    Term term;
    maybe(t, "coef", term.coef);
    if (auto it = t.find("factors"); it != t.end())
      for (const auto& x : *it) {
        Factor fa;
        fa.kind = factor_kind(x.at("kind").get<std::string>());
        maybe(x, "coord", fa.coord);
        maybe(x, "order", fa.order);
        maybe(x, "freq", fa.freq);
        maybe(x, "phase", fa.phase);
        maybe(x, "lo", fa.lo);
        maybe(x, "hi", fa.hi);
        term.factors.push_back(fa);
      }
    f.terms.push_back(std::move(term));
  }
}

void to_json(json& j, const PopulationConfig& c) {
  j = {{"G", c.G},
       {"d", c.d},
       {"sigma", c.sigma},
       {"mu0", c.mu0},
       {"tau", c.tau},
       {"f", c.f},
       {"h", c.h},
       {"m_sd", c.m_sd},
       {"b_noise_sd", c.b_noise_sd},
       {"exact_moments", c.exact_moments},
       {"covariates",
        {{"family", to_string(c.covariates.family)},
         {"lower", c.covariates.lower},
         {"upper", c.covariates.upper},
         {"sd", c.covariates.sd},
         {"max_shift", c.covariates.max_shift}}},
       {"propensity",
        {{"base", c.propensity.base},
         {"spread", c.propensity.spread},
         {"slope", c.propensity.slope},
         {"delta", c.propensity.delta}}}};
  if (c.B) j["B"] = mat(*c.B);
  if (c.m) j["m"] = mat(*c.m);
  if (c.b) j["b"] = mat(*c.b);
}

void from_json(const json& j, PopulationConfig& c) {
  c = {};
  maybe(j, "G", c.G);
  maybe(j, "d", c.d);
  maybe(j, "sigma", c.sigma);
  maybe(j, "mu0", c.mu0);
  maybe(j, "tau", c.tau);
  maybe(j, "f", c.f);
  maybe(j, "h", c.h);
  maybe(j, "m_sd", c.m_sd);
  maybe(j, "b_noise_sd", c.b_noise_sd);
  maybe(j, "exact_moments", c.exact_moments);
  if (j.contains("B")) c.B = get_mat(j["B"]);
  if (j.contains("m")) c.m = get_mat(j["m"]);
  if (j.contains("b")) c.b = get_mat(j["b"]);
  c.covariates.lower.assign(c.d, 0.0);
  c.covariates.upper.assign(c.d, 1.0);
  if (auto it = j.find("covariates"); it != j.end()) {
    if (auto f = it->find("family"); f != it->end())
      c.covariates.family = density_family_from_string(f->get<std::string>());
    maybe(*it, "lower", c.covariates.lower);
    maybe(*it, "upper", c.covariates.upper);
    maybe(*it, "sd", c.covariates.sd);
    maybe(*it, "max_shift", c.covariates.max_shift);
  }
  if (auto it = j.find("propensity"); it != j.end()) {
    maybe(*it, "base", c.propensity.base);
    maybe(*it, "spread", c.propensity.spread);
    maybe(*it, "slope", c.propensity.slope);
    maybe(*it, "delta", c.propensity.delta);
  }
}

json function_to_json(const DiscretizedFunction& f) { return vec(f.values); }

DiscretizedFunction function_from_json(const json& j, const GridPtr& grid) { return {grid, get_vec(j)}; }

json operator_to_json(const OperatorMatrix& m) { return mat(m.kernel_values); }

OperatorMatrix operator_from_json(const json& j, const GridPtr& grid) { return {grid, get_mat(j)}; }

json basis_to_json(const BasisSet& b, bool with_grid) {
  json lambda = json::array(), phi = json::array(), psi = json::array();
  for (double v : b.lambda) lambda.push_back(num(v));
  for (const auto& f : b.phi) phi.push_back(function_to_json(f));
  for (const auto& f : b.psi) psi.push_back(function_to_json(f));
  json j = {{"schema_version", kSchemaVersion},
            {"a", b.a},
            {"K", b.K},
            {"requested_K", b.requested_K},
            {"rank_deficient", b.rank_deficient},
            {"normalization", to_string(b.normalization)},
            {"lambda", lambda},
            {"phi", phi},
            {"psi", psi}};
  if (with_grid) j["grid"] = *b.grid;
  return j;
}

BasisSet basis_from_json(const json& j, GridPtr grid) {
  BasisSet b;
  b.grid = grid ? grid : grid_from_json(j.at("grid"));
  b.a = j.at("a").get<double>();
  b.K = j.at("K").get<int>();
  maybe(j, "requested_K", b.requested_K);
  maybe(j, "rank_deficient", b.rank_deficient);
  if (auto it = j.find("normalization"); it != j.end()) b.normalization = normalization_from_string(it->get<std::string>());
  for (const auto& v : j.at("lambda")) b.lambda.push_back(get_num(v));
  for (const auto& v : j.at("phi")) b.phi.push_back(function_from_json(v, b.grid));
  for (const auto& v : j.at("psi")) b.psi.push_back(function_from_json(v, b.grid));
  if (static_cast<int>(b.phi.size()) != b.K || static_cast<int>(b.psi.size()) != b.K ||
      static_cast<int>(b.lambda.size()) != b.K)
    bad("basis arrays disagree with K");
  return b;
}

json fpc_to_json(const FpcBasis& b, bool with_grid) {
  json ev = json::array(), ef = json::array();
  for (double v : b.eigenvalues) ev.push_back(num(v));
  for (const auto& f : b.eigenfunctions) ef.push_back(function_to_json(f));
  json j = {{"schema_version", kSchemaVersion},
            {"requested_K", b.requested_K},
            {"rank_deficient", b.rank_deficient},
            {"eigenvalues", ev},
            {"eigenfunctions", ef}};
  if (with_grid) j["grid"] = *b.grid;
  return j;
}

FpcBasis fpc_from_json(const json& j, GridPtr grid) {
  FpcBasis b;
  b.grid = grid ? grid : grid_from_json(j.at("grid"));
  maybe(j, "requested_K", b.requested_K);
  maybe(j, "rank_deficient", b.rank_deficient);
  for (const auto& v : j.at("eigenvalues")) b.eigenvalues.push_back(get_num(v));
  for (const auto& v : j.at("eigenfunctions")) b.eigenfunctions.push_back(function_from_json(v, b.grid));
  if (b.eigenvalues.size() != b.eigenfunctions.size()) bad("FPC arrays disagree");
  return b;
}

json prediction_to_json(const CatePrediction& p) {
  return {{"site_id", p.site_id},
          {"K_used", p.K_used},
          {"a", p.a},
          {"tau_hat", function_to_json(p.tau_hat)},
          {"tau_mean", function_to_json(p.tau_mean)}};
}

CatePrediction prediction_from_json(const json& j, const GridPtr& grid) {
  CatePrediction p;
  p.site_id = j.at("site_id").get<std::string>();
  p.grid = grid;
  p.K_used = j.at("K_used").get<int>();
  p.a = j.at("a").get<double>();
  p.tau_hat = function_from_json(j.at("tau_hat"), grid);
  p.tau_mean = function_from_json(j.at("tau_mean"), grid);
  return p;
}

json predictions_to_json(const std::vector<CatePrediction>& ps) {
  json a = json::array();
  for (const auto& p : ps) a.push_back(prediction_to_json(p));
  return a;
}

std::vector<CatePrediction> predictions_from_json(const json& j, const GridPtr& grid) {
  if (!j.is_array()) bad("prediction set must be an array");
  std::vector<CatePrediction> out;
  for (const auto& p : j) out.push_back(prediction_from_json(p, grid));
  return out;
}

void write_text(const std::string& text, const std::filesystem::path& path) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

void write_json(const json& artifact, const std::filesystem::path& path) {
  json j = artifact;
  if (j.is_object() && !j.contains("schema_version")) j["schema_version"] = kSchemaVersion;
  write_text(j.dump(2) + "\n", path);
}

json parse_json(const std::string& text, const std::string& source) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    // Recover line and column from the byte offset.
    const auto upto = std::min<std::size_t>(e.byte ? e.byte - 1 : 0, text.size());
    std::size_t line = 1, col = 1;
    for (std::size_t i = 0; i < upto; ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(ErrorCode::InvalidConfig, source + ": JSON syntax error at line " + std::to_string(line) + ", column " +
                                              std::to_string(col) + ": " + e.what());
  }
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read '" + path.string() + "'");
  std::ostringstream s;
  s << in.rdbuf();
  return parse_json(s.str(), path.string());
}

}  // namespace cate
