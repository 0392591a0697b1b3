#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cate/dataset.hpp"

namespace cate {

enum class KernelFamily { Gaussian, Epanechnikov };

const char* to_string(KernelFamily family);
KernelFamily kernel_family_from_string(const std::string& name);

//! Product kernel with isotropic bandwidth h on standardized coordinates:
//! coordinate j enters as (X_j - x_j) / (h * scale_j).
//!
//! Epanechnikov has compact support, so it can leave grid points without
//! local data on sparse designs; prefer Gaussian unless speed matters.
struct KernelSpec {
  KernelFamily family = KernelFamily::Gaussian;
  double h = 1.0;
  //! Per-coordinate scale; empty means 1 in every coordinate.
  std::vector<double> scale;
  //! Minimum local weighted mass is mass_factor * machine epsilon * n_g
  //! (n_g * (n_g - 1) for pair sums).
  double mass_factor = 10.0;

  void validate(int d) const;
  double scale_of(int j) const { return scale.empty() ? 1.0 : scale[j]; }
};

double kernel_eval(const KernelSpec& spec, std::span<const double> u);

struct LocalFitDiagnostics {
  double effective_sample_size = std::numeric_limits<double>::infinity();
  double min_local_mass = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> degenerate_points;

  void merge(const LocalFitDiagnostics& other);
};

//! Density ratio f0(x) / f_g(x), evaluated at unit covariates.
using DensityRatio = std::function<double(std::span<const double>)>;

struct LocalEstimate {
  double value = 0.0;
  bool degenerate = false;  // Nadaraya-Watson fallback was used
  double mass = 0.0;
  double effective_sample_size = 0.0;
};

LocalEstimate local_linear_fit(const SiteSample& site, int d_treat, std::span<const double> x,
                               const KernelSpec& spec, const DensityRatio& reweight = {});

double local_linear_mean(const SiteSample& site, int d_treat, std::span<const double> x, const KernelSpec& spec,
                         const DensityRatio& reweight = {});

LocalEstimate dyadic_local_linear_fit(const SiteSample& site, int d1, int d2, std::span<const double> x1,
                                      std::span<const double> x2, const KernelSpec& spec,
                                      const DensityRatio& reweight = {});

double dyadic_local_linear(const SiteSample& site, int d1, int d2, std::span<const double> x1,
                           std::span<const double> x2, const KernelSpec& spec, const DensityRatio& reweight = {});

}  // namespace cate
