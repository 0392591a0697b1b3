#include "cate/kernel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "cate/error.hpp"
#include "cate/smoother.hpp"

namespace cate {

const char* to_string(KernelFamily family) {
  return family == KernelFamily::Epanechnikov ? "epanechnikov" : "gaussian";
}

KernelFamily kernel_family_from_string(const std::string& name) {
  if (name == "gaussian") return KernelFamily::Gaussian;
  if (name == "epanechnikov") return KernelFamily::Epanechnikov;
  throw Error(ErrorCode::InvalidConfig, "unknown kernel family '" + name + "'");
}

void KernelSpec::validate(int d) const {
  if (!(h > 0.0) || !std::isfinite(h)) throw Error(ErrorCode::InvalidConfig, "bandwidth must be positive");
  if (d < 1 || d > kMaxDim) throw Error(ErrorCode::UnsupportedDimension, "covariate dimension must be 1, 2 or 3");
  if (!scale.empty() && static_cast<int>(scale.size()) != d)
    throw Error(ErrorCode::InvalidConfig, "kernel scale length differs from dimension");
  for (double s : scale)
    if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "kernel scale must be positive");
  if (!(mass_factor >= 0.0)) throw Error(ErrorCode::InvalidConfig, "mass factor must be nonnegative");
}

double kernel_eval(const KernelSpec& spec, std::span<const double> u) {
  double v = 1.0;
  for (double t : u) {
    if (spec.family == KernelFamily::Gaussian) {
      v *= std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
    } else {
      const double q = 1.0 - t * t;
      if (q <= 0.0) return 0.0;
      v *= 0.75 * q;
    }
  }
  return v;
}

void LocalFitDiagnostics::merge(const LocalFitDiagnostics& o) {
  effective_sample_size = std::min(effective_sample_size, o.effective_sample_size);
  min_local_mass = std::min(min_local_mass, o.min_local_mass);
  degenerate_points.insert(degenerate_points.end(), o.degenerate_points.begin(), o.degenerate_points.end());
  std::sort(degenerate_points.begin(), degenerate_points.end());
  degenerate_points.erase(std::unique(degenerate_points.begin(), degenerate_points.end()), degenerate_points.end());
}

namespace {

std::string point_text(std::span<const double> x) {
  std::ostringstream s;
  s << '(';
  for (std::size_t j = 0; j < x.size(); ++j) s << (j ? ", " : "") << x[j];
  s << ')';
  return s.str();
}

int site_dim(const SiteSample& site, std::span<const double> x) {
  if (site.records.empty()) throw Error(ErrorCode::InsufficientLocalData, "site '" + site.site_id + "' has no units");
  const auto d = site.records.front().x.size();
  if (x.size() != d) throw Error(ErrorCode::InvalidArgument, "evaluation point has wrong dimension");
  return static_cast<int>(d);
}

std::vector<std::size_t> rows_with(const SiteSample& site, int d_treat) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < site.records.size(); ++i)
    if (site.records[i].d_treat == d_treat) idx.push_back(i);
  return idx;
}

bool lex_less(std::span<const double> a, std::span<const double> b) {
  return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

LocalEstimate local_linear_fit(const SiteSample& site, int d_treat, std::span<const double> x, const KernelSpec& spec,
                               const DensityRatio& reweight) {
  const int d = site_dim(site, x);
  RowMatrix pt(1, d);
  for (int j = 0; j < d; ++j) pt(0, j) = x[j];
  Smoother sm(pt, spec);
  const auto rs = sm.rows(site, rows_with(site, d_treat), reweight);
  const auto ne = sm.mean_equations(rs).front();
  const auto fit = solve_intercept(ne, d + 1, d + 2, spec.mass_factor);
  if (fit.status == FitStatus::Insufficient)
    throw Error(ErrorCode::InsufficientLocalData,
                "site '" + site.site_id + "', D=" + std::to_string(d_treat) + ", x=" + point_text(x));
  return {fit.value, fit.status == FitStatus::Degenerate, fit.mass, fit.effective_sample_size};
}

double local_linear_mean(const SiteSample& site, int d_treat, std::span<const double> x, const KernelSpec& spec,
                         const DensityRatio& reweight) {
  return local_linear_fit(site, d_treat, x, spec, reweight).value;
}

LocalEstimate dyadic_local_linear_fit(const SiteSample& site, int d1, int d2, std::span<const double> x1,
                                      std::span<const double> x2, const KernelSpec& spec,
                                      const DensityRatio& reweight) {
  if (site.records.size() < 2) throw Error(ErrorCode::NoPairs, "site '" + site.site_id + "' has fewer than two units");
  const int d = site_dim(site, x1);
  if (static_cast<int>(x2.size()) != d) throw Error(ErrorCode::InvalidArgument, "evaluation point has wrong dimension");
  // Canonical order makes the (d1,x1,d2,x2) <-> (d2,x2,d1,x1) symmetry exact.
  if (d1 > d2 || (d1 == d2 && lex_less(x2, x1))) {
    std::swap(d1, d2);
    std::swap(x1, x2);
  }
  RowMatrix pts(2, d);
  for (int j = 0; j < d; ++j) {
    pts(0, j) = x1[j];
    pts(1, j) = x2[j];
  }
  Smoother sm(pts, spec);
  const auto left = sm.rows(site, rows_with(site, d1), reweight);
  const auto ls = sm.side(left);
  NormalEquations ne;
  if (d1 == d2) {
    std::vector<Exclusion> excl;
    for (int i = 0; i < static_cast<int>(left.rows()); ++i) excl.push_back({i, i});
    sm.pair_equations(left, ls, left, ls, excl, 0, 1, ne);
  } else {
    const auto right = sm.rows(site, rows_with(site, d2), reweight);
    const auto rs = sm.side(right);
    sm.pair_equations(left, ls, right, rs, {}, 0, 1, ne);
  }
  const auto fit = solve_intercept(ne, 1.0, 2.0 * d + 2.0, spec.mass_factor);
  if (fit.status == FitStatus::Insufficient)
    throw Error(ErrorCode::InsufficientLocalData, "site '" + site.site_id + "', pair (" + std::to_string(d1) + "," +
                                                      std::to_string(d2) + ") at " + point_text(x1) + " x " +
                                                      point_text(x2));
  return {fit.value, fit.status == FitStatus::Degenerate, fit.mass, fit.effective_sample_size};
}

double dyadic_local_linear(const SiteSample& site, int d1, int d2, std::span<const double> x1,
                           std::span<const double> x2, const KernelSpec& spec, const DensityRatio& reweight) {
  return dyadic_local_linear_fit(site, d1, d2, x1, x2, spec, reweight).value;
}

}  // namespace cate
