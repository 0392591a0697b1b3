#include <doctest.h>

#include <cmath>

#include "cate/transfer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cate;
using testing::error_code_of;

namespace {

struct Fixture {
  GridPtr grid = testing::unit_grid(1, 16);
  SyntheticPopulation pop = generate_population(testing::finite_rank_config(15, 2, 21), 8);
  OracleOperators o = oracle_operators(pop, grid);
  BasisSet basis = solve_optimal_basis(o.H_mumu, o.H_mutau, 0.05, 2);
};

double ise(const DiscretizedFunction& a, const DiscretizedFunction& b) {
  return (a.values - b.values).array().square().matrix().dot(a.grid->weights);
}

}  // namespace

TEST_CASE("scores") {
  Fixture f;
  const auto zero = compute_scores(f.o.mu0, f.o.mu0, f.basis);
  for (double t : zero.t) CHECK(t == 0.0);

  const DiscretizedFunction dir(f.grid, f.o.mu0.values + 0.7 * f.basis.phi[0].values);
  const auto s = compute_scores(dir, f.o.mu0, f.basis, true, "g");
  const double c = (1 + f.basis.a) / (1 - f.basis.a);
  double direct = 0.0;
  for (Eigen::Index j = 0; j < f.grid->size(); ++j)
    direct += 0.7 * f.basis.phi[0].values[j] * f.basis.phi[1].values[j] * f.grid->weights[j];
  CHECK(s.t[1] == doctest::Approx(c * direct).epsilon(1e-12));
  CHECK(s.t[0] == doctest::Approx(c * 0.7 * std::pow(norm(f.basis.phi[0]), 2)).epsilon(1e-12));
  CHECK(s.site_id == "g");

  const auto raw = compute_scores(dir, f.o.mu0, f.basis, false);
  CHECK(raw.t[0] * c == doctest::Approx(s.t[0]).epsilon(1e-14));

  const DiscretizedFunction twice(f.grid, f.o.mu0.values + 1.4 * f.basis.phi[0].values);
  const auto s2 = compute_scores(twice, f.o.mu0, f.basis);
  for (int k = 0; k < 2; ++k) CHECK(s2.t[k] == doctest::Approx(2.0 * s.t[k]).epsilon(1e-12));
  CHECK(error_code_of([&] { compute_scores(DiscretizedFunction::constant(testing::unit_grid(1, 8), 0), f.o.mu0, f.basis); }) ==
        ErrorCode::GridMismatch);
}

TEST_CASE("predictions") {
  Fixture f;
  ScoreVector zero{"t", {0.0, 0.0}};
  CHECK(predict_cate(zero, f.o.tau, f.basis, 2).tau_hat.values == f.o.tau.values);
  const auto s = compute_scores(f.o.site_mu0[3], f.o.mu0, f.basis);
  CHECK(predict_cate(s, f.o.tau, f.basis, 0).tau_hat.values == f.o.tau.values);
  const auto p1 = predict_cate(s, f.o.tau, f.basis, 1), p2 = predict_cate(s, f.o.tau, f.basis, 2);
  CHECK((p2.tau_hat.values - p1.tau_hat.values - s.t[1] * f.basis.psi[1].values).cwiseAbs().maxCoeff() < 1e-14);
  ScoreVector doubled = s;
  for (auto& t : doubled.t) t *= 2.0;
  const auto pd = predict_cate(doubled, f.o.tau, f.basis, 2);
  CHECK(((pd.tau_hat.values - f.o.tau.values) - 2.0 * (p2.tau_hat.values - f.o.tau.values)).cwiseAbs().maxCoeff() <
        1e-13);
  CHECK(p2.K_used == 2);
  CHECK(error_code_of([&] { predict_cate(s, f.o.tau, f.basis, 3); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("rank-1 noiseless recovery") {
  const auto grid = testing::unit_grid(1, 16);
  auto cfg = testing::legendre_population(9, {2}, {1}, {1.3});
  cfg.B = Eigen::MatrixXd::Constant(1, 1, 0.8);
  const auto pop = generate_population(cfg, 4);
  const auto o = oracle_operators(pop, grid);
  const auto basis = solve_optimal_basis(o.H_mumu, o.H_mutau, 1e-10, 1);
  for (int g = 0; g < pop.G(); ++g) {
    const auto p = predict_cate(compute_scores(o.site_mu0[g], o.mu0, basis), o.tau, basis, 1);
    CHECK((p.tau_hat.values - o.site_tau[g].values).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("finite-rank recovery for every target") {
  const auto grid = testing::unit_grid(1, 16);
  const auto pop = generate_population(testing::finite_rank_config(12, 2, 33), 6);
  const auto o = oracle_operators(pop, grid);
  const auto basis = solve_optimal_basis(o.H_mumu, o.H_mutau, 1e-10, 2);
  for (int g = 0; g < pop.G(); ++g) {
    const auto p = predict_cate(compute_scores(o.site_mu0[g], o.mu0, basis), o.tau, basis, 2);
    CHECK(ise(p.tau_hat, o.site_tau[g]) <= 1e-10);
  }
}

TEST_CASE("IMSE is nonincreasing in K") {
  const auto grid = testing::unit_grid(1, 16);
  const auto pop = generate_population(testing::finite_rank_config(20, 3, 2), 1);
  const auto o = oracle_operators(pop, grid);
  const auto basis = solve_optimal_basis(o.H_mumu, o.H_mutau, 0.01, 3);
  double prev = oracle_imse(o, {});
  for (int K = 1; K <= 3; ++K) {
    const double v = oracle_imse(o, std::vector<DiscretizedFunction>(basis.phi.begin(), basis.phi.begin() + K));
    CHECK(v <= prev + 1e-14);
    prev = v;
  }
}

TEST_CASE("site averages") {
  const auto grid = make_grid(1, {{0.0, 1.0}}, 64, uniform_density({0.0}, {1.0}));
  BasisSet b;
  b.grid = grid;
  b.K = 1;
  b.phi = {DiscretizedFunction::constant(grid, 1.0)};
  const auto mean = DiscretizedFunction::constant(grid, 0.2);
  auto predict = [&](const DiscretizedFunction& psi, double t) {
    b.psi = {psi};
    return predict_cate(ScoreVector{"t", {t}}, mean, b, 1);
  };
  const std::vector<std::vector<double>> units{{0.1}, {0.3}, {0.35}, {0.9}};
  CHECK(site_average_effect(predict(DiscretizedFunction::constant(grid, 1.0), 0.0), units).value == 0.0);
  CHECK(site_average_effect(predict(DiscretizedFunction::constant(grid, 1.0), 1.5), units).value ==
        doctest::Approx(1.5));
  const auto lin = sample(grid, [](auto x) { return 3.0 * x[0] - 1.0; });
  std::vector<std::vector<double>> cloud;
  for (int i = 0; i < 101; ++i) cloud.push_back({0.3 + 0.4 * i / 100.0});
  CHECK(std::abs(site_average_effect(predict(lin, 1.0), cloud).value - (3.0 * 0.5 - 1.0)) <= 1e-3);
  const auto out = site_average_effect(predict(lin, 1.0), {{0.5}, {1.2}, {-0.1}});
  CHECK(out.out_of_range == std::vector<std::size_t>{1, 2});
  CHECK(error_code_of([&] { site_average_effect(predict(lin, 1.0), {}); }) == ErrorCode::EmptyUnitList);
}

TEST_CASE("study aggregates") {
  const auto one = study_aggregate({{"a", 1.0}, {"b", 3.0}}, {{"a", "S"}, {"b", "S"}});
  REQUIRE(one.size() == 1);
  CHECK(one[0].mean == 2.0);
  CHECK(one[0].sites == 2);
  const auto two = study_aggregate({{"a", 1.0}, {"b", 3.0}}, {{"a", "S2"}, {"b", "S1"}});
  REQUIRE(two.size() == 2);
  CHECK(two[0].study == "S2");
  CHECK(two[0].mean == 1.0);
  CHECK(two[1].mean == 3.0);
  CHECK(error_code_of([] { study_aggregate({{"a", 1.0}, {"c", 2.0}}, {{"a", "S"}}); }) == ErrorCode::UnmappedSite);
}

TEST_CASE("hold-out correlation") {
  const std::vector<double> r{1.0, 2.5, -0.5, 4.0};
  CHECK(evaluate_holdout_correlation(r, r) == doctest::Approx(1.0));
  CHECK(evaluate_holdout_correlation({-1.0, -2.5, 0.5, -4.0}, r) == doctest::Approx(-1.0));
  CHECK(error_code_of([&] { evaluate_holdout_correlation({2, 2, 2, 2}, r); }) == ErrorCode::DegenerateVariance);
  CHECK(error_code_of([&] { evaluate_holdout_correlation({1, 2}, {1, 2}); }) == ErrorCode::InvalidArgument);
}
