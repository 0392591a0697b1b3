#pragma once

#include <string>
#include <vector>

#include "cate/basis.hpp"
#include "cate/dataset.hpp"
#include "cate/grid.hpp"
#include "cate/kernel.hpp"

namespace cate {

enum class CvLoss {
  //! Squared error of the held-out site's outcomes (or outcome products for
  //! the covariance bandwidth) against the fit on the remaining sites, over
  //! units inside the grid box.
  HeldOutOutcomes,
  //! f0-weighted squared distance between the held-out site's own fit and
  //! the fit on the remaining sites.
  Discrepancy,
};

const char* to_string(CvLoss loss);
CvLoss cv_loss_from_string(const std::string& s);

struct CvPlan {
  std::vector<double> h_mu_grid;
  std::vector<double> h_H_grid;
  std::vector<double> a_grid;
  int K_cv = 2;
  //! Non-empty: select K jointly with a over these values.
  std::vector<int> K_grid;
  KernelFamily family = KernelFamily::Gaussian;
  CvLoss loss = CvLoss::HeldOutOutcomes;
  //! Losses within tie_tol * (min loss + loss of the zero prediction) of the
  //! minimum are ties.
  double tie_tol = 1e-9;

  void validate() const;
};

struct CvCandidate {
  double value = 0.0;
  int K = 0;
  //! Mean over the folds that succeeded; NaN when every fold failed, which
  //! excludes the candidate.
  double loss = 0.0;
  std::size_t failed_folds = 0;
  std::string failure;
};

struct CvSelection {
  double chosen = 0.0;
  int chosen_K = 0;
  std::size_t folds = 0;
  std::vector<CvCandidate> table;
};

struct CvReport {
  CvSelection h_mu, h_H, a;
  std::size_t folds = 0;
  //! (log n / (E n))^{1/(4+d)} with n the mean experimental site size.
  double rate_rule_h = 0.0;
};

//! Bandwidths are in standardized units (multiplied by the pooled
//! covariate sd), as everywhere else in the pipeline.
CvSelection cv_bandwidth_mean(const Dataset& ds, const GridPtr& grid, const CvPlan& plan);
CvSelection cv_bandwidth_cov(const Dataset& ds, const GridPtr& grid, const CvPlan& plan);
//! Held-out CATE reference: mu_g(.;1) - mu_g(.;0) for the within-cluster
//! design. For the cluster-level design only treated clusters are held out,
//! against their follow-up minus baseline change net of the mean change
//! among control clusters.
CvSelection cv_regularization(const Dataset& ds, const GridPtr& grid, const CvPlan& plan, const KernelSpec& spec_mu,
                              const KernelSpec& spec_H, const BasisOptions& opt = {});

//! (log n / (E n))^{1/(4+d)}, n the mean experimental site size (baseline
//! period only for the cluster-level design).
double rate_rule_h(const Dataset& ds);

CvReport run_cv(const Dataset& ds, const GridPtr& grid, const CvPlan& plan, const BasisOptions& opt = {});

}  // namespace cate
