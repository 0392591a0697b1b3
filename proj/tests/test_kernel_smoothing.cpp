#include <doctest.h>

#include <cmath>

#include "cate/kernel.hpp"
#include "cate/operators.hpp"
#include "support.hpp"

using namespace cate;
using testing::error_code_of;

namespace {

KernelSpec spec(KernelFamily f, double h) {
  KernelSpec k;
  k.family = f;
  k.h = h;
  return k;
}

SiteSample affine_site(int d, int n_side) {
  auto xs = d == 1 ? testing::line_points(n_side * n_side, 0.0, 1.0) : testing::square_points(n_side, 0.0, 1.0);
  return testing::make_site("a", xs, [d](const std::vector<double>& x, int) {
    return d == 1 ? 2.0 + 3.0 * x[0] : 2.0 + 3.0 * x[0] - 1.5 * x[1];
  });
}

}  // namespace

TEST_CASE("kernel values") {
  const double zero[] = {0.0, 0.0};
  const double one[] = {1.0};
  CHECK(kernel_eval(spec(KernelFamily::Gaussian, 1), std::span(zero, 1)) == doctest::Approx(0.398942280401).epsilon(1e-10));
  CHECK(kernel_eval(spec(KernelFamily::Epanechnikov, 1), std::span(one, 1)) == 0.0);
  CHECK(kernel_eval(spec(KernelFamily::Gaussian, 1), std::span(zero, 2)) == doctest::Approx(0.159154943092).epsilon(1e-10));
  CHECK(kernel_eval(spec(KernelFamily::Epanechnikov, 1), std::span(zero, 1)) == doctest::Approx(0.75));
}

TEST_CASE("kernels integrate to one and are symmetric") {
  for (auto fam : {KernelFamily::Gaussian, KernelFamily::Epanechnikov}) {
    const auto [nodes, weights] = gauss_legendre(200, -8.0, 8.0);
    double total = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const double u[] = {nodes[i]};
      const double v[] = {-nodes[i]};
      CHECK(kernel_eval(spec(fam, 1), u) == kernel_eval(spec(fam, 1), v));
      total += weights[i] * kernel_eval(spec(fam, 1), u);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(fam == KernelFamily::Gaussian ? 1e-12 : 1e-3));
  }
}

TEST_CASE("local linear reproduces affine data at every bandwidth") {
  for (int d : {1, 2}) {
    const auto site = affine_site(d, 7);
    for (double h : {0.1, 0.5, 2.0}) {
      for (double px : {0.2, 0.5, 0.8}) {
        std::vector<double> x(d, px);
        if (d == 2) x[1] = 1.0 - px;
        const double truth = d == 1 ? 2.0 + 3.0 * x[0] : 2.0 + 3.0 * x[0] - 1.5 * x[1];
        CHECK(std::abs(local_linear_mean(site, 0, x, spec(KernelFamily::Gaussian, h)) - truth) <= 1e-8);
      }
    }
  }
}

TEST_CASE("constant outcomes give the constant") {
  const auto site = testing::make_site("a", testing::line_points(20, 0, 1), [](auto&, int) { return 7.0; });
  const std::vector<double> x{0.3};
  CHECK(local_linear_mean(site, 1, x, spec(KernelFamily::Gaussian, 0.2)) == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(dyadic_local_linear(site, 0, 1, x, std::vector<double>{0.6}, spec(KernelFamily::Gaussian, 0.2)) ==
        doctest::Approx(49.0).epsilon(1e-12));
}

TEST_CASE("one-unit site cannot be fitted") {
  const auto site = testing::make_site("a", {{0.5}}, [](auto&, int) { return 1.0; });
  const std::vector<double> x{0.5};
  CHECK(error_code_of([&] { local_linear_mean(site, 0, x, spec(KernelFamily::Gaussian, 1)); }) ==
        ErrorCode::InsufficientLocalData);
  CHECK(error_code_of([&] { dyadic_local_linear(site, 0, 0, x, x, spec(KernelFamily::Gaussian, 1)); }) ==
        ErrorCode::NoPairs);
}

TEST_CASE("no data inside the support is an error") {
  const auto site = testing::make_site("a", testing::line_points(10, 0, 0.2), [](auto&, int) { return 1.0; });
  CHECK(error_code_of([&] {
          local_linear_mean(site, 0, std::vector<double>{0.9}, spec(KernelFamily::Epanechnikov, 0.1));
        }) == ErrorCode::InsufficientLocalData);
}

TEST_CASE("too few distinct units falls back to the kernel-weighted mean") {
  // Two control units in d = 1: the local linear design needs three.
  auto site = testing::make_site("a", {{0.2}, {0.4}}, [](auto& x, int) { return x[0]; });
  site.records[1].d_treat = 0;
  const auto fit = local_linear_fit(site, 0, std::vector<double>{0.3}, spec(KernelFamily::Gaussian, 1.0));
  CHECK(fit.degenerate);
  CHECK(fit.value == doctest::Approx(0.3));
}

TEST_CASE("dyadic fit of constant outcomes is the product") {
  const auto site = testing::make_site("a", testing::line_points(12, 0, 1), [](auto&, int) { return 5.0; });
  for (double x1 : {0.1, 0.5})
    for (double x2 : {0.3, 0.9})
      CHECK(dyadic_local_linear(site, 0, 0, std::vector<double>{x1}, std::vector<double>{x2},
                                spec(KernelFamily::Gaussian, 0.3)) == doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("dyadic fit is exact for bilinear products of affine outcomes") {
  // Two symmetric clouds with no overlap under the compact kernel, so every
  // contributing pair has one unit in each cloud. The product weights make
  // the bilinear term orthogonal to the affine fit only at the cloud centres.
  std::vector<std::vector<double>> xs;
  for (double c : {0.25, 0.75})
    for (double off : {-0.04, -0.02, 0.0, 0.02, 0.04}) xs.push_back({c + off});
  auto site = testing::make_site("a", xs, [](auto& x, int) { return 1.0 + 2.0 * x[0]; });
  for (auto& r : site.records) r.d_treat = 0;
  const auto k = spec(KernelFamily::Epanechnikov, 0.1);
  const double v = dyadic_local_linear(site, 0, 0, std::vector<double>{0.25}, std::vector<double>{0.75}, k);
  CHECK(v == doctest::Approx((1.0 + 2.0 * 0.25) * (1.0 + 2.0 * 0.75)).epsilon(1e-10));
}

TEST_CASE("dyadic fit is symmetric in its arguments") {
  auto site = testing::make_site("a", testing::line_points(15, 0, 1),
                                 [](auto& x, int) { return std::sin(4 * x[0]) + x[0] * x[0]; });
  for (auto& r : site.records) r.d_treat = 0;
  const auto k = spec(KernelFamily::Gaussian, 0.25);
  const std::vector<double> x1{0.2}, x2{0.7};
  CHECK(dyadic_local_linear(site, 0, 0, x1, x2, k) == dyadic_local_linear(site, 0, 0, x2, x1, k));
}

TEST_CASE("scaling outcomes scales the fits") {
  auto make = [](double c) {
    return testing::make_site("a", testing::line_points(20, 0, 1),
                              [c](auto& x, int d) { return c * (std::cos(3 * x[0]) + 0.3 * d); });
  };
  const auto s1 = make(1.0), s3 = make(3.0);
  const auto k = spec(KernelFamily::Gaussian, 0.2);
  const std::vector<double> x1{0.4}, x2{0.6};
  CHECK(local_linear_mean(s3, 1, x1, k) == doctest::Approx(3.0 * local_linear_mean(s1, 1, x1, k)).epsilon(1e-12));
  CHECK(dyadic_local_linear(s3, 0, 1, x1, x2, k) ==
        doctest::Approx(9.0 * dyadic_local_linear(s1, 0, 1, x1, x2, k)).epsilon(1e-12));
}

TEST_CASE("unit density ratio changes nothing") {
  const auto site = testing::make_site("a", testing::line_points(20, 0, 1), [](auto& x, int) { return std::exp(x[0]); });
  const auto k = spec(KernelFamily::Gaussian, 0.3);
  const std::vector<double> x{0.45};
  const DensityRatio one = [](std::span<const double>) { return 1.0; };
  CHECK(local_linear_mean(site, 0, x, k, one) == local_linear_mean(site, 0, x, k));
  CHECK(dyadic_local_linear(site, 0, 1, x, x, k, one) == dyadic_local_linear(site, 0, 1, x, x, k));
}

TEST_CASE("grid curve agrees with pointwise fits") {
  const auto grid = testing::unit_grid(1, 10);
  const auto site = testing::make_site("a", testing::line_points(30, 0, 1),
                                       [](auto& x, int) { return std::sin(5 * x[0]); });
  const auto k = spec(KernelFamily::Gaussian, 0.15);
  Smoother sm(grid->points, k);
  LocalFitDiagnostics diag;
  const auto curve = site_curve(sm, site, rows_with_treatment(site, 1), "t", &diag);
  for (Eigen::Index j = 0; j < grid->size(); ++j)
    CHECK(curve[j] == doctest::Approx(local_linear_mean(site, 1, grid->point(j), k)).epsilon(1e-10));
  CHECK(diag.degenerate_points.empty());
  CHECK(diag.effective_sample_size > 0.0);
}

TEST_CASE("grid surface agrees with pointwise dyadic fits") {
  const auto grid = testing::unit_grid(1, 6);
  const auto site = testing::make_site("a", testing::line_points(24, 0, 1),
                                       [](auto& x, int d) { return std::sin(5 * x[0]) + d; });
  const auto k = spec(KernelFamily::Gaussian, 0.2);
  Smoother sm(grid->points, k);
  const auto surf = site_surface(sm, site, within_pairs(site, 0, 1), "s", nullptr);
  for (Eigen::Index a = 0; a < grid->size(); ++a)
    for (Eigen::Index b = 0; b < grid->size(); ++b)
      CHECK(surf(a, b) ==
            doctest::Approx(dyadic_local_linear(site, 0, 1, grid->point(a), grid->point(b), k)).epsilon(1e-9));
}

TEST_CASE("kernel spec validation") {
  CHECK(error_code_of([] { spec(KernelFamily::Gaussian, 0.0).validate(1); }) == ErrorCode::InvalidConfig);
  CHECK(error_code_of([] { spec(KernelFamily::Gaussian, 1.0).validate(4); }) == ErrorCode::UnsupportedDimension);
  CHECK(kernel_family_from_string("epanechnikov") == KernelFamily::Epanechnikov);
  CHECK(error_code_of([] { kernel_family_from_string("box"); }) == ErrorCode::InvalidConfig);
}
