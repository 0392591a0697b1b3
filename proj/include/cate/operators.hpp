#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cate/dataset.hpp"
#include "cate/grid.hpp"
#include "cate/kernel.hpp"
#include "cate/smoother.hpp"

namespace cate {

//! Copy of `spec` with scale set to the pooled standard deviation of each
//! covariate over experimental sites (left untouched if already set).
KernelSpec standardized(const KernelSpec& spec, const Dataset& ds);

struct SiteMeanFit {
  std::string site_id;
  //! Control arm (within-cluster) or baseline period (cluster-level).
  //! Always set for the target site; under sparse sampling experimental
  //! sites without enough local data are left unset.
  std::optional<DiscretizedFunction> mu0;
  //! Treated arm (within-cluster) or follow-up period (cluster-level); unset
  //! for the target site.
  std::optional<DiscretizedFunction> mu1;
  LocalFitDiagnostics diag0, diag1;
};

struct MeanEstimates {
  DiscretizedFunction mu0, mu1, tau;
  std::vector<SiteMeanFit> sites;  // aligned with Dataset::sites
  LocalFitDiagnostics diagnostics;
};

//! Per-site local linear fits averaged with equal site weights over the
//! experimental sites (dense), or a pooled fit with each site reweighted by
//! f0/f_g and 1/n_g (sparse). The bandwidth is used as given; call
//! standardized() first for per-coordinate scaling.
MeanEstimates estimate_mean_functions(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_mu);

struct CovarianceEstimates {
  OperatorMatrix H_mumu;
  //! H_mutau(x1, x2) = cov(mu_g(x1; 0), tau_g(x2)).
  OperatorMatrix H_mutau;
  std::optional<OperatorMatrix> H_tautau;
  LocalFitDiagnostics diagnostics;
};

CovarianceEstimates estimate_covariance_kernels(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_H);
CovarianceEstimates estimate_covariance_cluster_design(const Dataset& ds, const GridPtr& grid,
                                                       const KernelSpec& spec_H);
//! Dispatches on ds.design.
CovarianceEstimates estimate_covariances(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_H);

struct PsdProjection {
  OperatorMatrix op;
  double clamped_mass = 0.0;  // sum of |negative eigenvalues| of the weighted form
};

PsdProjection psd_project(const OperatorMatrix& m);

// Per-site building blocks, shared with cross-validation.

std::vector<std::size_t> rows_with_treatment(const SiteSample& site, int d_treat);
std::vector<std::size_t> rows_in_period(const SiteSample& site, int period);

//! Density ratio f0 / f_g for the sparse variant.
DensityRatio sparse_ratio(const Dataset& ds, const SiteSample& site, const QuadratureGrid& grid);

//! Local linear curve of one site's rows over all grid points.
Eigen::VectorXd site_curve(const Smoother& sm, const SiteSample& site, const std::vector<std::size_t>& rows,
                           const std::string& label, LocalFitDiagnostics* diag);

//! Which unit pairs enter a second-moment surface.
struct PairSelection {
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
  //! Left and right are the same rows; pairs (i, i) are excluded and the
  //! surface is symmetric.
  bool same = false;
  //! Match units across periods by unit id and exclude those pairs.
  bool exclude_same_unit = false;
};

PairSelection within_pairs(const SiteSample& site, int d1, int d2);
PairSelection cluster_pairs(const SiteSample& site, bool baseline_both);

//! Calls fn(k, l, equations) for every grid pair (k <= l only when
//! pairs.same). Rows are multiplied by `ratio` (if set) and by the given
//! per-side constants.
void for_each_pair_equation(const Smoother& sm, const SiteSample& site, const PairSelection& pairs,
                            const DensityRatio& ratio, double left_mult, double right_mult,
                            const std::function<void(Eigen::Index, Eigen::Index, const NormalEquations&)>& fn);

//! Solve per-point mean equations into a curve; Insufficient points throw.
Eigen::VectorXd solve_curve(const Smoother& sm, const std::vector<NormalEquations>& eqs, const std::string& label,
                            LocalFitDiagnostics* diag);

//! Solve pair equations stored row-major (k * m + l) into a surface. With
//! `same`, only k <= l entries are read and the result is mirrored.
Eigen::MatrixXd solve_surface(const Smoother& sm, const std::vector<NormalEquations>& eqs, bool same,
                              const std::string& label, LocalFitDiagnostics* diag);

//! Dyadic local linear surface over all grid point pairs.
Eigen::MatrixXd site_surface(const Smoother& sm, const SiteSample& site, const PairSelection& pairs,
                             const std::string& label, LocalFitDiagnostics* diag);

}  // namespace cate
