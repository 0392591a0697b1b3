#include <doctest.h>

#include <cmath>
#include <random>

#include "cate/operators.hpp"
#include "support.hpp"

using namespace cate;
using testing::error_code_of;

namespace {

KernelSpec gauss(double h) {
  KernelSpec k;
  k.h = h;
  return k;
}

// Sites with constant outcome m_g under control and m_g + b_g under treatment.
Dataset constant_sites(const std::vector<double>& m, const std::vector<double>& b, int n = 12) {
  std::vector<SiteSample> sites;
  for (std::size_t g = 0; g < m.size(); ++g)
    sites.push_back(testing::make_site("s" + std::to_string(g), testing::line_points(n, 0, 1),
                                       [&, g](auto&, int d) { return m[g] + d * b[g]; }));
  sites.push_back(testing::make_site("t", testing::line_points(n, 0, 1), [](auto&, int) { return 0.0; }, true));
  return testing::make_dataset(std::move(sites), 1);
}

SiteSample cluster_site(const std::string& id, int treated, double base, double follow, int n = 10) {
  SiteSample s;
  s.site_id = id;
  s.cluster_treatment = treated;
  const auto xs = testing::line_points(n, 0, 1);
  for (int i = 0; i < n; ++i) {
    for (int period : {0, 1}) {
      auto r = testing::unit(id, xs[i], period == 1 ? treated : 0, period == 0 ? base : follow);
      r.period = period;
      r.unit_id = "u" + std::to_string(i);
      s.records.push_back(r);
    }
  }
  return s;
}

Dataset cluster_dataset(const std::vector<double>& m, const std::vector<int>& treated, const std::vector<double>& b) {
  std::vector<SiteSample> sites;
  for (std::size_t g = 0; g < m.size(); ++g)
    sites.push_back(cluster_site("c" + std::to_string(g), treated[g], m[g], m[g] + treated[g] * b[g]));
  auto t = cluster_site("t", 0, 0.0, 0.0);
  t.role = Role::Target;
  std::erase_if(t.records, [](const UnitRecord& r) { return *r.period == 1; });
  sites.push_back(t);
  auto ds = testing::make_dataset(std::move(sites), 1);
  ds.design = Design::ClusterLevel;
  validate(ds);
  return ds;
}

double max_abs(const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("grid construction") {
  const auto g1 = make_grid(1, {{0.0, 1.0}}, 8, uniform_density({0.0}, {1.0}));
  CHECK(g1->size() == 8);
  CHECK(g1->weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK((g1->weights.array() > 0).all());
  const auto g2 = make_grid(2, {{0.0, 1.0}, {-1.0, 2.0}}, 8, gaussian_density({0.5, 0.5}, {1.0, 1.0}));
  CHECK(g2->size() == 64);
  CHECK(g2->weights.sum() == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(g2->point(1)[0] == g2->point(0)[0]);
  CHECK(g2->point(1)[1] > g2->point(0)[1]);
  CHECK(error_code_of([] { make_grid(4, Bounds(4, {0.0, 1.0}), 4, uniform_density({0, 0, 0, 0}, {1, 1, 1, 1})); }) ==
        ErrorCode::UnsupportedDimension);
  CHECK(error_code_of([] { make_grid(1, {{0.0, 1.0}}, 3, uniform_density({0.0}, {1.0})); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("inner products") {
  const auto grid = testing::unit_grid(1, 16);
  const auto one = DiscretizedFunction::constant(grid, 1.0);
  CHECK(inner_product(one, one) == doctest::Approx(1.0).epsilon(1e-14));
  const auto x = sample(grid, [](auto p) { return p[0]; });
  CHECK(inner_product(x, x) == doctest::Approx(1.0 / 3.0).epsilon(1e-10));
  auto y = sample(grid, [](auto p) { return std::exp(p[0]); });
  y.values -= inner_product(y, x) / inner_product(x, x) * x.values;
  CHECK(std::abs(inner_product(y, x)) <= 1e-12);
  const auto other = testing::unit_grid(1, 8);
  CHECK(error_code_of([&] { inner_product(one, DiscretizedFunction::constant(other, 1.0)); }) == ErrorCode::GridMismatch);
}

TEST_CASE("inner product is symmetric positive semidefinite") {
  const auto grid = testing::unit_grid(2, 5);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01;
  for (int t = 0; t < 10; ++t) {
    auto f = sample(grid, [&](auto) { return n01(rng); });
    auto g = sample(grid, [&](auto) { return n01(rng); });
    CHECK(inner_product(f, g) == inner_product(g, f));
    CHECK(inner_product(f, f) >= 0.0);
  }
}

TEST_CASE("grid refinement leaves low-degree polynomial products unchanged") {
  const auto coarse = testing::unit_grid(1, 4);
  const auto fine = testing::unit_grid(1, 8);
  for (int p = 0; p <= 3; ++p)
    for (int q = 0; q <= 4; ++q) {
      auto ip = [&](const GridPtr& g) {
        return inner_product(sample(g, [p](auto x) { return std::pow(x[0], p); }),
                             sample(g, [q](auto x) { return std::pow(x[0], q); }));
      };
      CHECK(std::abs(ip(coarse) - ip(fine)) < 1e-12);
      CHECK(ip(fine) == doctest::Approx(1.0 / (p + q + 1)).epsilon(1e-12));
    }
}

TEST_CASE("operator application and interpolation") {
  const auto grid = testing::unit_grid(1, 8);
  const auto u = sample(grid, [](auto x) { return 1.0 + x[0]; });
  const auto v = sample(grid, [](auto x) { return x[0] * x[0]; });
  OperatorMatrix h(grid, u.values * v.values.transpose());
  const auto phi = DiscretizedFunction(grid, u.values / inner_product(u, u));
  const auto psi = apply(h, phi);
  CHECK((psi.values - v.values).cwiseAbs().maxCoeff() < 1e-12);
  const auto back = apply_adjoint(h, DiscretizedFunction(grid, v.values / inner_product(v, v)));
  CHECK((back.values - u.values).cwiseAbs().maxCoeff() < 1e-12);
  const auto lin = sample(grid, [](auto x) { return 2.0 - 3.0 * x[0]; });
  for (double x : {0.2, 0.55, 0.9}) CHECK(interpolate(lin, std::vector<double>{x}) == doctest::Approx(2.0 - 3.0 * x));
  bool outside = false;
  interpolate(lin, std::vector<double>{1.5}, &outside);
  CHECK(outside);
}

TEST_CASE("mean functions: identical affine sites") {
  std::vector<SiteSample> sites;
  for (int g = 0; g < 4; ++g)
    sites.push_back(testing::make_site("s" + std::to_string(g), testing::line_points(20, 0, 1),
                                       [](auto& x, int) { return x[0]; }, g == 3));
  const auto ds = testing::make_dataset(std::move(sites), 1);
  const auto grid = testing::unit_grid(1, 8);
  const auto est = estimate_mean_functions(ds, grid, gauss(0.3));
  for (Eigen::Index j = 0; j < grid->size(); ++j) {
    CHECK(std::abs(est.mu0.values[j] - grid->point(j)[0]) < 1e-8);
    CHECK(std::abs(est.tau.values[j]) < 1e-8);
  }
  REQUIRE(est.sites[3].mu0);
  CHECK_FALSE(est.sites[3].mu1);
}

TEST_CASE("mean functions average sites with equal weight") {
  auto ds = constant_sites({1.0, 3.0}, {0.0, 0.0});
  ds.sites[1].records.resize(6);  // unequal sizes do not change the site weights
  const auto est = estimate_mean_functions(ds, testing::unit_grid(1, 6), gauss(0.3));
  CHECK((est.mu0.values.array() - 2.0).abs().maxCoeff() < 1e-12);
  CHECK((est.mu1.values.array() - 2.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("mean-function failures name the site") {
  auto ds = constant_sites({1.0, 3.0}, {0.0, 0.0});
  ds.sites[0].records.resize(1);
  try {
    estimate_mean_functions(ds, testing::unit_grid(1, 6), gauss(0.3));
    FAIL("expected InsufficientLocalData");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientLocalData);
    CHECK(std::string(e.what()).find("s0") != std::string::npos);
  }
}

TEST_CASE("two opposite sites give H_mumu = f f") {
  const auto ds = constant_sites({1.5, -1.5}, {0.0, 0.0});
  const auto cov = estimate_covariance_kernels(ds, testing::unit_grid(1, 6), gauss(0.3));
  CHECK((cov.H_mumu.kernel_values.array() - 2.25).abs().maxCoeff() < 1e-10);
  CHECK(max_abs(cov.H_mutau.kernel_values) < 1e-10);
}

TEST_CASE("identical sites give zero covariance") {
  const auto ds = constant_sites({2.0, 2.0, 2.0}, {1.0, 1.0, 1.0});
  const auto cov = estimate_covariance_kernels(ds, testing::unit_grid(1, 6), gauss(0.3));
  CHECK(max_abs(cov.H_mumu.kernel_values) < 1e-10);
  CHECK(max_abs(cov.H_mutau.kernel_values) < 1e-10);
  CHECK(max_abs(cov.H_tautau->kernel_values) < 1e-10);
}

TEST_CASE("constant heterogeneity gives the site covariances") {
  const std::vector<double> m{1.0, 2.0, 6.0}, b{0.5, -1.0, 2.0};
  const auto cov = estimate_covariance_kernels(constant_sites(m, b), testing::unit_grid(1, 6), gauss(0.4));
  auto c = [](const std::vector<double>& u, const std::vector<double>& v) {
    double su = 0, sv = 0, suv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) su += u[i], sv += v[i], suv += u[i] * v[i];
    const double n = static_cast<double>(u.size());
    return suv / n - su * sv / (n * n);
  };
  CHECK((cov.H_mumu.kernel_values.array() - c(m, m)).abs().maxCoeff() < 1e-9);
  CHECK((cov.H_mutau.kernel_values.array() - c(m, b)).abs().maxCoeff() < 1e-9);
  CHECK((cov.H_tautau->kernel_values.array() - c(b, b)).abs().maxCoeff() < 1e-9);
}

TEST_CASE("self-covariances are exactly symmetric") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  std::vector<SiteSample> sites;
  for (int g = 0; g < 5; ++g) {
    const double a = n01(rng), s = n01(rng);
    sites.push_back(testing::make_site("s" + std::to_string(g), testing::line_points(16, 0, 1),
                                       [&](auto& x, int d) { return a + s * std::sin(3 * x[0]) + d * a * x[0] + 0.1 * n01(rng); },
                                       g == 4));
  }
  const auto cov = estimate_covariance_kernels(testing::make_dataset(std::move(sites), 1), testing::unit_grid(1, 7),
                                               gauss(0.3));
  CHECK(cov.H_mumu.kernel_values == cov.H_mumu.kernel_values.transpose());
  CHECK(cov.H_tautau->kernel_values == cov.H_tautau->kernel_values.transpose());
  CHECK(cov.H_tautau->weighted() == cov.H_tautau->weighted().transpose());
}

TEST_CASE("covariance to noiseless rank-1 population") {
  // mu_g(x;0) = mu0 + m_g f, tau_g = tau + m_g h with f, h affine: H_mumu and
  // H_mutau are affine-times-affine, which the dyadic fit only approximates;
  // a small bandwidth brings them close to the truth.
  auto cfg = testing::legendre_population(6, {1}, {1}, {1.0});
  cfg.exact_moments = false;
  const auto pop = generate_population(cfg, 17);
  AssignmentProtocol proto;
  proto.seed = 3;
  proto.target = 5;
  const auto ds = sample_dataset(pop, 400, proto);
  const auto grid = make_grid(1, {{0.15, 0.85}}, 6, uniform_density({0.0}, {1.0}));
  const auto cov = estimate_covariance_kernels(ds, grid, gauss(0.05));
  // finite-population truth over the experimental sites
  Eigen::VectorXd m(5), b(5);
  for (int i = 0; i < 5; ++i) m[i] = pop.m(i, 0), b[i] = pop.b(i, 0);
  const double vm = (m.array() - m.mean()).square().mean();
  const double cmb = ((m.array() - m.mean()) * (b.array() - b.mean())).mean();
  const Factor f{FactorKind::Legendre, 0, 1};
  for (Eigen::Index k = 0; k < grid->size(); ++k)
    for (Eigen::Index l = 0; l < grid->size(); ++l) {
      const double fk = f(grid->point(k)), fl = f(grid->point(l));
      CHECK(cov.H_mumu.kernel_values(k, l) == doctest::Approx(vm * fk * fl).epsilon(0.05).scale(vm));
      CHECK(cov.H_mutau.kernel_values(k, l) == doctest::Approx(cmb * fk * fl).epsilon(0.05).scale(std::abs(cmb)));
    }
}

TEST_CASE("cluster design: constant shift has no covariance") {
  const auto ds = cluster_dataset({-1, 0, 1, -1, 0, 1}, {1, 1, 1, 0, 0, 0}, {0.7, 0.7, 0.7, 0, 0, 0});
  const auto cov = estimate_covariance_cluster_design(ds, testing::unit_grid(1, 5), gauss(0.3));
  CHECK(max_abs(cov.H_mutau.kernel_values) < 1e-10);
  CHECK((cov.H_mumu.kernel_values.array() - 2.0 / 3.0).abs().maxCoeff() < 1e-10);
  CHECK_FALSE(cov.H_tautau);
}

TEST_CASE("cluster design: rank-1 effect covariance") {
  const std::vector<double> m{-1, 0, 1, -1, 0, 1};
  std::vector<double> b;
  for (double v : m) b.push_back(0.5 * v);
  const auto ds = cluster_dataset(m, {1, 1, 1, 0, 0, 0}, b);
  const auto cov = estimate_covariances(ds, testing::unit_grid(1, 5), gauss(0.3));
  CHECK((cov.H_mutau.kernel_values.array() - 0.5 * 2.0 / 3.0).abs().maxCoeff() < 1e-10);
}

TEST_CASE("cluster design guards") {
  CHECK(error_code_of([] {
          const auto ds = cluster_dataset({1, 2, 3}, {0, 0, 0}, {0, 0, 0});
          estimate_covariance_cluster_design(ds, testing::unit_grid(1, 5), gauss(0.3));
        }) == ErrorCode::NoTreatedClusters);
  CHECK(error_code_of([] {
          const auto ds = cluster_dataset({1, 2, 3}, {1, 1, 1}, {0, 0, 0});
          estimate_covariance_cluster_design(ds, testing::unit_grid(1, 5), gauss(0.3));
        }) == ErrorCode::NoControlClusters);
}

TEST_CASE("sparse variant reproduces affine data") {
  std::vector<SiteSample> sites;
  for (int g = 0; g < 4; ++g) {
    auto s = testing::make_site("s" + std::to_string(g), testing::line_points(20 + 5 * g, 0.1 * g, 0.7 + 0.1 * g),
                                [](auto& x, int d) { return 1.0 + 2.0 * x[0] + d; }, g == 3);
    sites.push_back(std::move(s));
  }
  auto ds = testing::make_dataset(std::move(sites), 1);
  ds.sampling = Sampling::Sparse;
  for (auto& s : ds.sites) {
    std::vector<std::vector<double>> xs;
    for (auto& r : s.records) xs.push_back(r.x);
    s.covariate_density = fit_density(DensityFamily::Gaussian, xs);
  }
  const auto grid = make_grid(1, {{0.3, 0.7}}, 6, gaussian_density({0.5}, {0.3}));
  const auto est = estimate_mean_functions(ds, grid, gauss(0.3));
  for (Eigen::Index j = 0; j < grid->size(); ++j) {
    CHECK(est.mu0.values[j] == doctest::Approx(1.0 + 2.0 * grid->point(j)[0]).epsilon(1e-8));
    CHECK(est.tau.values[j] == doctest::Approx(1.0).epsilon(1e-8));
  }
}

TEST_CASE("psd projection") {
  const auto grid = make_grid(1, {{0.0, 1.0}}, 4, uniform_density({0.0}, {1.0}));
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n01;
  Eigen::MatrixXd a(4, 4);
  for (int i = 0; i < 16; ++i) a.data()[i] = n01(rng);

  SUBCASE("PSD input is a fixed point") {
    const auto m = OperatorMatrix::from_weighted(grid, a * a.transpose());
    const auto p = psd_project(m);
    CHECK(max_abs(p.op.kernel_values - m.kernel_values) < 1e-12);
    CHECK(p.clamped_mass == 0.0);
  }
  SUBCASE("negative eigenvalues are clamped") {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(4, 4);
    d.diagonal() << 1.0, -0.1, 0.3, 0.0;
    const auto p = psd_project(OperatorMatrix::from_weighted(grid, d));
    Eigen::MatrixXd expect = d;
    expect(1, 1) = 0.0;
    CHECK(max_abs(p.op.weighted() - expect) < 1e-14);
    CHECK(p.clamped_mass == doctest::Approx(0.1));
  }
  SUBCASE("random symmetric input is projected to the nearest PSD matrix") {
    const Eigen::MatrixXd s = 0.5 * (a + a.transpose());
    const auto p = psd_project(OperatorMatrix::from_weighted(grid, s));
    const Eigen::MatrixXd out = p.op.weighted();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(out);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
    const double dist = (out - s).norm();
    // brute force: nearest PSD from the eigendecomposition of s
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(s);
    const Eigen::MatrixXd best =
        ref.eigenvectors() * ref.eigenvalues().cwiseMax(0.0).asDiagonal() * ref.eigenvectors().transpose();
    CHECK(max_abs(out - best) < 1e-12);
    for (int t = 0; t < 200; ++t) {
      Eigen::MatrixXd e(4, 4);
      for (int i = 0; i < 16; ++i) e.data()[i] = 0.05 * n01(rng);
      Eigen::MatrixXd cand = best + e * e.transpose();
      CHECK((cand - s).norm() >= dist - 1e-12);
    }
  }
}

TEST_CASE("psd projection leaves oracle operators unchanged") {
  const auto pop = generate_population(testing::legendre_population(12, {1, 2, 3}, {1, 2, 3}, {1.0, 0.6, 0.3}), 5);
  const auto grid = testing::unit_grid(1, 12);
  const auto oracle = oracle_operators(pop, grid);
  const auto p = psd_project(oracle.H_mumu);
  CHECK(max_abs(p.op.kernel_values - oracle.H_mumu.kernel_values) < 1e-10);
}
