#include "cate/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "cate/error.hpp"
#include "cate/operators.hpp"
#include "cate/parallel.hpp"
#include "cate/rng.hpp"

namespace cate {

namespace {

// Stream ids. Population draws and dataset draws never share a stream even
// when they share a seed.
constexpr std::uint64_t kCoefStream = 1;
constexpr std::uint64_t kDensityStream = 2;
constexpr std::uint64_t kPropensityStream = 3;
constexpr std::uint64_t kTargetStream = (1ull << 32) | 1;
constexpr std::uint64_t kClusterStream = (1ull << 32) | 2;
constexpr std::uint64_t kSiteStreamBase = 2ull << 32;

void centre_columns(Eigen::MatrixXd& a) {
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j).array() -= a.col(j).mean();
}

double sample_coordinate(Philox& rng, const DensitySpec& f, int j) {
  const double lo = f.lower[j], hi = f.upper[j];
  if (f.family == DensityFamily::Uniform) return lo + (hi - lo) * rng.uniform();
  for (int tries = 0; tries < 1000000; ++tries) {
    const double v = f.loc[j] + f.scale[j] * rng.normal();
    if (v >= lo && v <= hi) return v;
  }
  throw Error(ErrorCode::InvalidConfig, "truncated Gaussian covariate model has negligible mass on the box");
}

}  // namespace

double Factor::operator()(std::span<const double> x) const {
  const double v = x[coord];
  switch (kind) {
    case FactorKind::Monomial:
      return std::pow(v, order);
    case FactorKind::Sin:
      return std::sin(2.0 * std::numbers::pi * freq * v + phase);
    case FactorKind::Cos:
      return std::cos(2.0 * std::numbers::pi * freq * v + phase);
    case FactorKind::Legendre: {
      const double t = 2.0 * (v - lo) / (hi - lo) - 1.0;
      return std::sqrt(2.0 * order + 1.0) * std::legendre(static_cast<unsigned>(order), t);
    }
  }
  return 0.0;
}

double AnalyticFunction::operator()(std::span<const double> x) const {
  double s = 0.0;
  for (const auto& t : terms) {
    double v = t.coef;
    for (const auto& f : t.factors) v *= f(x);
    s += v;
  }
  return s;
}

AnalyticFunction AnalyticFunction::constant(double c) { return {{Term{c, {}}}}; }

AnalyticFunction AnalyticFunction::legendre(int coord, int order, double lo, double hi, double coef) {
  Factor f;
  f.kind = FactorKind::Legendre;
  f.coord = coord;
  f.order = order;
  f.lo = lo;
  f.hi = hi;
  return {{Term{coef, {f}}}};
}

void PopulationConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (d < 1 || d > 3) fail("d must be 1, 2 or 3");
  const int l = L();
  if (l < 1) fail("need at least one component function f");
  if (static_cast<int>(h.size()) != l) fail("f and h must have the same length");
  if (G < 2) fail("G must be at least 2");
  if (!(sigma >= 0.0)) fail("sigma must be nonnegative");
  auto check_coord = [&](const AnalyticFunction& fn) {
    for (const auto& t : fn.terms)
      for (const auto& f : t.factors) {
        if (f.coord < 0 || f.coord >= d) fail("function factor refers to a missing coordinate");
        if (f.order < 0) fail("factor order must be nonnegative");
        if (f.kind == FactorKind::Legendre && !(f.hi > f.lo)) fail("Legendre factor needs lo < hi");
      }
  };
  check_coord(mu0);
  check_coord(tau);
  for (const auto& fn : f) check_coord(fn);
  for (const auto& fn : h) check_coord(fn);
  if (m) {
    if (m->rows() != G || m->cols() != l) fail("explicit m must be G x L");
  } else if (static_cast<int>(m_sd.size()) != l) {
    fail("m_sd must have one entry per component");
  }
  if (b && (b->rows() != G || b->cols() != l)) fail("explicit b must be G x L");
  if (B && (B->rows() != l || B->cols() != l)) fail("B must be L x L");
  if (!b_noise_sd.empty() && static_cast<int>(b_noise_sd.size()) != l) fail("b_noise_sd must have L entries");
  if (exact_moments && !m && G <= 2 * l) fail("exact_moments needs G > 2L");
  const auto& c = covariates;
  if (static_cast<int>(c.lower.size()) != d || static_cast<int>(c.upper.size()) != d)
    fail("covariate box must have d lower and upper bounds");
  for (int j = 0; j < d; ++j)
    if (!(c.upper[j] > c.lower[j])) fail("covariate box must have lower < upper");
  if (c.family == DensityFamily::TruncatedGaussian) {
    if (static_cast<int>(c.sd.size()) != d) fail("truncated Gaussian covariates need d standard deviations");
    for (double s : c.sd)
      if (!(s > 0.0)) fail("covariate sd must be positive");
    if (!(c.max_shift >= 0.0 && c.max_shift <= 0.5)) fail("max_shift must lie in [0, 0.5]");
  } else if (c.family != DensityFamily::Uniform) {
    fail("covariate model must be uniform or truncated_gaussian");
  }
  const auto& p = propensity;
  if (!(p.delta > 0.0 && p.delta < 0.5)) fail("propensity delta must lie in (0, 0.5)");
  if (!(p.base > 0.0 && p.base < 1.0)) fail("propensity base must lie in (0, 1)");
  if (!(p.spread >= 0.0)) fail("propensity spread must be nonnegative");
}

double SyntheticPopulation::mu(int g, std::span<const double> x, int d) const {
  double v = config.mu0(x);
  for (int l = 0; l < config.L(); ++l) v += m(g, l) * config.f[l](x);
  if (d) v += tau(g, x);
  return v;
}

double SyntheticPopulation::tau(int g, std::span<const double> x) const {
  double v = config.tau(x);
  for (int l = 0; l < config.L(); ++l) v += b(g, l) * config.h[l](x);
  return v;
}

double SyntheticPopulation::propensity(int g, std::span<const double> x) const {
  const auto& p = config.propensity;
  const double mid = 0.5 * (config.covariates.lower[0] + config.covariates.upper[0]);
  const double v = p.base + propensity_offset[g] + p.slope * (x[0] - mid);
  return std::clamp(v, p.delta, 1.0 - p.delta);
}

double SyntheticPopulation::mean_mu(std::span<const double> x, int d) const {
  double s = 0.0;
  for (int g = 0; g < G(); ++g) s += mu(g, x, d);
  return s / G();
}

double SyntheticPopulation::mean_tau(std::span<const double> x) const {
  double s = 0.0;
  for (int g = 0; g < G(); ++g) s += tau(g, x);
  return s / G();
}

SyntheticPopulation generate_population(const PopulationConfig& config, std::uint64_t seed) {
  config.validate();
  const int G = config.G, L = config.L();
  SyntheticPopulation pop;
  pop.config = config;
  pop.seed = seed;

  Philox coef(seed, kCoefStream);
  Eigen::MatrixXd z(G, 2 * L);
  for (int g = 0; g < G; ++g)
    for (int j = 0; j < 2 * L; ++j) z(g, j) = coef.normal();
  if (config.exact_moments && !config.m) {
    centre_columns(z);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(z);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(G, 2 * L);
    // Fix the column signs so the draw, not the factorization, decides them.
    for (int j = 0; j < 2 * L; ++j)
      if (q.col(j).dot(z.col(j)) < 0.0) q.col(j) *= -1.0;
    z = q * std::sqrt(static_cast<double>(G));
  }
  if (config.m) {
    pop.m = *config.m;
  } else {
    pop.m = z.leftCols(L) * Eigen::Map<const Eigen::VectorXd>(config.m_sd.data(), L).asDiagonal();
  }
  if (config.b) {
    pop.b = *config.b;
  } else {
    const Eigen::MatrixXd B = config.B ? *config.B : Eigen::MatrixXd::Identity(L, L);
    pop.b = pop.m * B.transpose();
    if (!config.b_noise_sd.empty())
      pop.b += z.rightCols(L) * Eigen::Map<const Eigen::VectorXd>(config.b_noise_sd.data(), L).asDiagonal();
  }
  centre_columns(pop.m);
  centre_columns(pop.b);

  const auto& cov = config.covariates;
  Philox dens(seed, kDensityStream);
  for (int g = 0; g < G; ++g) {
    if (cov.family == DensityFamily::Uniform) {
      pop.site_density.push_back(uniform_density(cov.lower, cov.upper));
      continue;
    }
    DensitySpec f;
    f.family = DensityFamily::TruncatedGaussian;
    f.lower = cov.lower;
    f.upper = cov.upper;
    f.scale = cov.sd;
    for (int j = 0; j < config.d; ++j) {
      const double width = cov.upper[j] - cov.lower[j];
      const double u = 2.0 * dens.uniform() - 1.0;
      f.loc.push_back(0.5 * (cov.lower[j] + cov.upper[j]) + u * cov.max_shift * width);
    }
    pop.site_density.push_back(std::move(f));
  }
  Philox prop(seed, kPropensityStream);
  for (int g = 0; g < G; ++g) pop.propensity_offset.push_back(config.propensity.spread * (2.0 * prop.uniform() - 1.0));
  return pop;
}

std::string synthetic_site_id(int g) {
  std::ostringstream s;
  s << 's';
  s.width(3);
  s.fill('0');
  s << g;
  return s.str();
}

Dataset sample_dataset(const SyntheticPopulation& pop, int n, const AssignmentProtocol& protocol) {
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "n must be at least 2");
  const int G = pop.G(), d = pop.config.d;
  if (G < 3) throw Error(ErrorCode::InvalidArgument, "sampling a dataset needs at least 3 sites");
  int target = 0;
  if (protocol.target) {
    target = *protocol.target;
    if (target < 0 || target >= G) throw Error(ErrorCode::InvalidArgument, "target index out of range");
  } else {
    Philox rng(protocol.seed, kTargetStream);
    target = static_cast<int>(rng.below(static_cast<std::uint64_t>(G)));
  }

  std::vector<int> treated(G, 0);
  if (protocol.design == Design::ClusterLevel) {
    if (!(protocol.share_treated >= 0.0 && protocol.share_treated <= 1.0))
      throw Error(ErrorCode::InvalidArgument, "share_treated must lie in [0, 1]");
    std::vector<int> exp;
    for (int g = 0; g < G; ++g)
      if (g != target) exp.push_back(g);
    const auto count = static_cast<std::size_t>(std::floor(protocol.share_treated * exp.size() + 0.5));
    Philox rng(protocol.seed, kClusterStream);
    // Partial Fisher-Yates: the first `count` entries are the treated sites.
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(exp.size() - i));
      std::swap(exp[i], exp[j]);
      treated[exp[i]] = 1;
    }
  }

  Dataset ds;
  ds.d = d;
  ds.design = protocol.design;
  ds.sampling = protocol.sampling;
  ds.sites.resize(G);
  const double sigma = pop.config.sigma;
  parallel_for(static_cast<std::size_t>(G), [&](std::size_t gi) {
    const int g = static_cast<int>(gi);
    Philox rng(protocol.seed, kSiteStreamBase + gi);
    SiteSample& s = ds.sites[gi];
    s.site_id = synthetic_site_id(g);
    s.role = g == target ? Role::Target : Role::Experimental;
    if (protocol.sampling == Sampling::Sparse) s.covariate_density = pop.site_density[gi];
    if (protocol.design == Design::ClusterLevel) s.cluster_treatment = s.role == Role::Experimental ? treated[gi] : 0;
    const auto& f = pop.site_density[gi];
    std::vector<double> x(d);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < d; ++j) x[j] = sample_coordinate(rng, f, j);
      UnitRecord r;
      r.site_id = s.site_id;
      r.x = x;
      r.unit_id = "u" + std::to_string(i);
      if (protocol.design == Design::WithinCluster) {
        r.d_treat = s.role == Role::Target ? 0 : (rng.bernoulli(pop.propensity(g, x)) ? 1 : 0);
        r.y = pop.mu(g, x, r.d_treat) + sigma * rng.normal();
        s.records.push_back(std::move(r));
        continue;
      }
      r.period = 0;
      r.d_treat = 0;
      r.y = pop.mu(g, x, 0) + sigma * rng.normal();
      const double y1 = pop.mu(g, x, treated[gi]) + sigma * rng.normal();
      s.records.push_back(r);
      if (s.role == Role::Target) continue;
      r.period = 1;
      r.d_treat = treated[gi];
      r.y = y1;
      s.records.push_back(std::move(r));
    }
  });
  validate(ds);
  return ds;
}

OracleOperators oracle_operators(const SyntheticPopulation& pop, const GridPtr& grid) {
  if (grid->d != pop.config.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from population");
  const int G = pop.G();
  const auto m = grid->size();
  Eigen::MatrixXd P(m, G), T(m, G);
  for (int g = 0; g < G; ++g)
    for (Eigen::Index k = 0; k < m; ++k) {
      const auto x = grid->point(k);
      P(k, g) = pop.mu(g, x, 0);
      T(k, g) = pop.tau(g, x);
    }
  const Eigen::VectorXd pm = P.rowwise().mean(), tm = T.rowwise().mean();
  const Eigen::MatrixXd dp = P.colwise() - pm, dt = T.colwise() - tm;
  OracleOperators out;
  const Eigen::MatrixXd hmm = dp * dp.transpose() / G;
  const Eigen::MatrixXd htt = dt * dt.transpose() / G;
  out.H_mumu = OperatorMatrix(grid, 0.5 * (hmm + hmm.transpose()));
  out.H_mutau = OperatorMatrix(grid, dp * dt.transpose() / G);
  out.H_tautau = OperatorMatrix(grid, 0.5 * (htt + htt.transpose()));
  out.mu0 = DiscretizedFunction(grid, pm);
  out.tau = DiscretizedFunction(grid, tm);
  out.mu1 = DiscretizedFunction(grid, pm + tm);
  for (int g = 0; g < G; ++g) {
    out.site_mu0.emplace_back(grid, P.col(g));
    out.site_tau.emplace_back(grid, T.col(g));
  }
  return out;
}

double oracle_imse(const OracleOperators& oracle, const std::vector<DiscretizedFunction>& phi) {
  const auto& grid = oracle.mu0.grid;
  const auto G = static_cast<Eigen::Index>(oracle.site_mu0.size());
  const auto m = grid->size();
  const auto K = static_cast<Eigen::Index>(phi.size());
  Eigen::MatrixXd S(G, K), Y(G, m);
  for (Eigen::Index g = 0; g < G; ++g) {
    const Eigen::VectorXd dm = oracle.site_mu0[g].values - oracle.mu0.values;
    Y.row(g) = (oracle.site_tau[g].values - oracle.tau.values).transpose();
    for (Eigen::Index k = 0; k < K; ++k) {
      require_same_grid(phi[k].grid, grid);
      S(g, k) = (dm.array() * phi[k].values.array() * grid->weights.array()).sum();
    }
  }
  Eigen::MatrixXd R = Y;
  if (K > 0) {
    // The basis itself must be independent; scores that are collinear
    // across sites only shrink the regression's column space.
    Eigen::MatrixXd P(m, K);
    for (Eigen::Index k = 0; k < K; ++k) P.col(k) = grid->sqrt_weights().cwiseProduct(phi[k].values);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> basis_qr(P);
    basis_qr.setThreshold(1e-10);
    if (basis_qr.rank() < K) throw Error(ErrorCode::CollinearScores, "basis functions are linearly dependent on the grid");
    // Scores are measured against their Cauchy-Schwarz bound, so a function
    // orthogonal to every mu_g - mu counts as zero despite rounding.
    double dm_sq = 0.0;
    for (Eigen::Index g = 0; g < G; ++g) {
      const Eigen::VectorXd dm = oracle.site_mu0[g].values - oracle.mu0.values;
      dm_sq += (dm.array().square() * grid->weights.array()).sum();
    }
    Eigen::MatrixXd Sn = S;
    for (Eigen::Index k = 0; k < K; ++k) {
      const double bound = std::sqrt(dm_sq) * norm(phi[k]);
      Sn.col(k) = bound > 0.0 ? Eigen::VectorXd(S.col(k) / bound) : Eigen::VectorXd::Zero(G);
    }
    const Eigen::JacobiSVD<Eigen::MatrixXd> svd(Sn, Eigen::ComputeThinU);
    Eigen::Index rank = 0;
    while (rank < svd.singularValues().size() && svd.singularValues()[rank] > 1e-10) ++rank;
    if (rank > 0) {
      const Eigen::MatrixXd u = svd.matrixU().leftCols(rank);
      R = Y - u * (u.transpose() * Y);
    }
  }
  double total = 0.0;
  for (Eigen::Index g = 0; g < G; ++g) total += (R.row(g).transpose().array().square() * grid->weights.array()).sum();
  return total / static_cast<double>(G);
}

double oracle_imse(const SyntheticPopulation& pop, const GridPtr& grid, const std::vector<DiscretizedFunction>& phi) {
  return oracle_imse(oracle_operators(pop, grid), phi);
}

double rate_rule_bandwidth(double h_constant, int G, double n, int d) {
  return h_constant * std::pow(std::log(n) / (static_cast<double>(G) * n), 1.0 / (4.0 + d));
}

namespace {

double median_finite(std::vector<double> v) {
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double sup_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

SyntheticPopulation without_site(const SyntheticPopulation& pop, int drop) {
  SyntheticPopulation out = pop;
  const int G = pop.G();
  Eigen::MatrixXd m(G - 1, pop.m.cols()), b(G - 1, pop.b.cols());
  for (int g = 0, r = 0; g < G; ++g) {
    if (g == drop) continue;
    m.row(r) = pop.m.row(g);
    b.row(r++) = pop.b.row(g);
  }
  out.m = std::move(m);
  out.b = std::move(b);
  out.config.G = G - 1;
  out.site_density.erase(out.site_density.begin() + drop);
  out.propensity_offset.erase(out.propensity_offset.begin() + drop);
  return out;
}

}  // namespace

RateTable rate_experiment(const RateConfig& config, const std::vector<std::pair<int, int>>& ladder, int reps,
                          std::uint64_t seed) {
  if (reps < 1) throw Error(ErrorCode::InvalidArgument, "reps must be positive");
  for (std::size_t i = 1; i < ladder.size(); ++i)
    if (ladder[i].first < ladder[i - 1].first || ladder[i].second < ladder[i - 1].second)
      throw Error(ErrorCode::InvalidArgument, "ladder must be ascending");
  const auto& cov = config.population.covariates;
  const int d = config.population.d;
  Bounds bounds;
  for (int j = 0; j < d; ++j) bounds.emplace_back(cov.lower.at(j), cov.upper.at(j));
  const auto grid = make_grid(d, bounds, config.points_per_dim, uniform_density(cov.lower, cov.upper));
  const double nan = std::numeric_limits<double>::quiet_NaN();

  RateTable table;
  table.reps = reps;
  table.seed = seed;
  for (const auto& [G, n] : ladder) {
    RateRow row;
    row.G = G;
    row.n = n;
    row.h = rate_rule_bandwidth(config.h_constant, G - 1, n, d);
    std::vector<double> mu_e(reps, nan), h_e(reps, nan), phi_e(reps, nan), lam_e(reps, nan);
    parallel_for(static_cast<std::size_t>(reps), [&](std::size_t r) {
      auto pc = config.population;
      pc.G = G;
      const std::uint64_t s = seed + r;
      const auto pop = generate_population(pc, s);
      AssignmentProtocol proto;
      proto.design = config.design;
      proto.seed = s;
      const auto ds = sample_dataset(pop, n, proto);
      KernelSpec spec;
      spec.family = config.kernel;
      spec.h = row.h;
      spec = standardized(spec, ds);
      const auto oracle = oracle_operators(
          config.reference_excludes_target ? without_site(pop, static_cast<int>(ds.target_index())) : pop, grid);
      const auto means = estimate_mean_functions(ds, grid, spec);
      const auto covs = estimate_covariances(ds, grid, spec);
      mu_e[r] = std::max(sup_diff(means.mu0.values, oracle.mu0.values), sup_diff(means.mu1.values, oracle.mu1.values));
      h_e[r] = (covs.H_mumu.kernel_values - oracle.H_mumu.kernel_values).cwiseAbs().maxCoeff();
      try {
        const auto truth = solve_optimal_basis(oracle.H_mumu, oracle.H_mutau, config.a, 1);
        const auto est = solve_optimal_basis(psd_project(covs.H_mumu).op, covs.H_mutau, config.a, 1);
        if (truth.K == 1 && est.K == 1) {
          const auto& p = est.phi[0].values;
          const auto& q = truth.phi[0].values;
          phi_e[r] = std::min(sup_diff(p, q), sup_diff(p, -q));
          lam_e[r] = std::abs(est.lambda[0] - truth.lambda[0]);
        }
      } catch (const Error&) {
      }
    });
    row.mu_error = median_finite(mu_e);
    row.H_error = median_finite(h_e);
    row.phi_error = median_finite(phi_e);
    row.lambda_error = median_finite(lam_e);
    row.H_errors = h_e;
    table.rows.push_back(std::move(row));
  }
  return table;
}

std::string format_rate_csv(const RateTable& table) {
  std::ostringstream s;
  s << "G,n,h,mu_error,H_error,phi_error,lambda_error\n";
  for (const auto& r : table.rows)
    s << r.G << ',' << r.n << ',' << format_double(r.h) << ',' << format_double(r.mu_error) << ','
      << format_double(r.H_error) << ',' << format_double(r.phi_error) << ',' << format_double(r.lambda_error) << '\n';
  return s.str();
}

}  // namespace cate
