#include "cate/density.hpp"

#include <cmath>
#include <numbers>

#include "cate/error.hpp"

namespace cate {

namespace {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

const char* to_string(DensityFamily family) {
  switch (family) {
    case DensityFamily::Uniform: return "uniform";
    case DensityFamily::Gaussian: return "gaussian";
    case DensityFamily::TruncatedGaussian: return "truncated_gaussian";
    case DensityFamily::LogNormal: return "lognormal";
  }
  return "uniform";
}

DensityFamily density_family_from_string(const std::string& name) {
  if (name == "uniform") return DensityFamily::Uniform;
  if (name == "gaussian") return DensityFamily::Gaussian;
  if (name == "truncated_gaussian") return DensityFamily::TruncatedGaussian;
  if (name == "lognormal") return DensityFamily::LogNormal;
  throw Error(ErrorCode::InvalidConfig, "unknown density family '" + name + "'");
}

int DensitySpec::dim() const {
  if (family == DensityFamily::Uniform) return static_cast<int>(lower.size());
  return static_cast<int>(loc.size());
}

void DensitySpec::validate() const {
  const auto d = static_cast<std::size_t>(dim());
  if (d == 0) throw Error(ErrorCode::InvalidConfig, "density has dimension 0");
  auto check_box = [&] {
    if (lower.size() != d || upper.size() != d)
      throw Error(ErrorCode::InvalidConfig, "density bounds have wrong length");
    for (std::size_t j = 0; j < d; ++j)
      if (!(lower[j] < upper[j])) throw Error(ErrorCode::InvalidConfig, "density bounds not increasing");
  };
  auto check_loc_scale = [&] {
    if (loc.size() != d || scale.size() != d)
      throw Error(ErrorCode::InvalidConfig, "density loc/scale have wrong length");
    for (double s : scale)
      if (!(s > 0.0) || !std::isfinite(s)) throw Error(ErrorCode::InvalidConfig, "density scale must be positive");
  };
  switch (family) {
    case DensityFamily::Uniform: check_box(); break;
    case DensityFamily::Gaussian:
    case DensityFamily::LogNormal: check_loc_scale(); break;
    case DensityFamily::TruncatedGaussian:
      check_loc_scale();
      check_box();
      break;
  }
}

double DensitySpec::pdf(std::span<const double> x) const {
  const auto d = static_cast<std::size_t>(dim());
  if (x.size() != d) throw Error(ErrorCode::InvalidArgument, "density evaluated at point of wrong dimension");
  double p = 1.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double xj = x[j];
    switch (family) {
      case DensityFamily::Uniform:
        if (xj < lower[j] || xj > upper[j]) return 0.0;
        p /= upper[j] - lower[j];
        break;
      case DensityFamily::Gaussian:
        p *= normal_pdf((xj - loc[j]) / scale[j]) / scale[j];
        break;
      case DensityFamily::TruncatedGaussian: {
        if (xj < lower[j] || xj > upper[j]) return 0.0;
        const double mass =
            normal_cdf((upper[j] - loc[j]) / scale[j]) - normal_cdf((lower[j] - loc[j]) / scale[j]);
        p *= normal_pdf((xj - loc[j]) / scale[j]) / (scale[j] * mass);
        break;
      }
      case DensityFamily::LogNormal:
        if (xj <= 0.0) return 0.0;
        p *= normal_pdf((std::log(xj) - loc[j]) / scale[j]) / (scale[j] * xj);
        break;
    }
  }
  return p;
}

DensitySpec uniform_density(std::vector<double> lower, std::vector<double> upper) {
  DensitySpec s;
  s.family = DensityFamily::Uniform;
  s.lower = std::move(lower);
  s.upper = std::move(upper);
  s.validate();
  return s;
}

DensitySpec gaussian_density(std::vector<double> mean, std::vector<double> sd) {
  DensitySpec s;
  s.family = DensityFamily::Gaussian;
  s.loc = std::move(mean);
  s.scale = std::move(sd);
  s.validate();
  return s;
}

DensitySpec fit_density(DensityFamily family, const std::vector<std::vector<double>>& x) {
  if (family != DensityFamily::Gaussian && family != DensityFamily::LogNormal)
    throw Error(ErrorCode::InvalidConfig, "only gaussian and lognormal densities can be fitted");
  if (x.size() < 2) throw Error(ErrorCode::InsufficientLocalData, "density fit needs at least two points");
  const std::size_t d = x.front().size();
  DensitySpec s;
  s.family = family;
  s.loc.assign(d, 0.0);
  s.scale.assign(d, 0.0);
  const double n = static_cast<double>(x.size());
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (const auto& row : x) {
      double v = row[j];
      if (family == DensityFamily::LogNormal) {
        if (v <= 0.0) throw Error(ErrorCode::InvalidArgument, "lognormal fit needs positive covariates");
        v = std::log(v);
      }
      sum += v;
    }
    const double mean = sum / n;
    double ss = 0.0;
    for (const auto& row : x) {
      const double v = family == DensityFamily::LogNormal ? std::log(row[j]) : row[j];
      ss += (v - mean) * (v - mean);
    }
    s.loc[j] = mean;
    s.scale[j] = std::sqrt(ss / n);
    if (!(s.scale[j] > 0.0)) throw Error(ErrorCode::DegenerateVariance, "covariate has zero spread within a site");
  }
  return s;
}

}  // namespace cate
