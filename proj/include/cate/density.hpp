#pragma once

#include <span>
#include <string>
#include <vector>

namespace cate {

enum class DensityFamily { Uniform, Gaussian, TruncatedGaussian, LogNormal };

const char* to_string(DensityFamily family);
DensityFamily density_family_from_string(const std::string& name);

//! Product density over independent coordinates.
//!
//! Parameter use by family:
//!   Uniform            lower, upper
//!   Gaussian           loc (mean), scale (sd)
//!   TruncatedGaussian  loc, scale, lower, upper
//!   LogNormal          loc (mean of log x), scale (sd of log x)
struct DensitySpec {
  DensityFamily family = DensityFamily::Uniform;
  std::vector<double> loc;
  std::vector<double> scale;
  std::vector<double> lower;
  std::vector<double> upper;

  int dim() const;
  double pdf(std::span<const double> x) const;
  void validate() const;

  bool operator==(const DensitySpec&) const = default;
};

DensitySpec uniform_density(std::vector<double> lower, std::vector<double> upper);
DensitySpec gaussian_density(std::vector<double> mean, std::vector<double> sd);

//! Maximum likelihood fit of a Gaussian or log-normal product density to the
//! rows of `x` (n points of dimension d, row-major).
DensitySpec fit_density(DensityFamily family, const std::vector<std::vector<double>>& x);

}  // namespace cate
