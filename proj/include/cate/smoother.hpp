#pragma once

// Evaluation engine shared by the single-point smoothers and the grid-wide
// estimators. Everything is expressed through normal equations accumulated
// in coordinates centred at the evaluation point, which lets pooled
// estimators sum equations across sites before solving.

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "cate/grid.hpp"
#include "cate/kernel.hpp"

namespace cate {

constexpr int kMaxDim = 3;
constexpr int kMaxParams = 2 * kMaxDim + 1;

struct NormalEquations {
  int p = 0;
  std::array<double, kMaxParams * kMaxParams> gram{};
  std::array<double, kMaxParams> rhs{};
  double mass = 0.0;
  double mass_sq = 0.0;
  double gross_mass = 0.0;  // before removing excluded pairs
  double count = 0.0;
  double n_obs = 0.0;       // units (or pairs) available, for the mass threshold

  void add(const NormalEquations& other);
  void subtract(const NormalEquations& other);
};

enum class FitStatus { Ok, Degenerate, Insufficient };

struct FitResult {
  double value = 0.0;
  FitStatus status = FitStatus::Insufficient;
  double mass = 0.0;
  double effective_sample_size = 0.0;
};

//! Intercept of the fit. min_count: fewer contributing observations is an
//! error; full_count: fewer falls back to the weighted mean of the response.
FitResult solve_intercept(const NormalEquations& ne, double min_count, double full_count, double mass_factor);

//! Selected rows of one site, covariates already divided by h * scale.
struct RowSet {
  RowMatrix xs;
  Eigen::VectorXd y;
  Eigen::VectorXd mult;
  std::vector<std::size_t> source;  // row index within the site
  std::size_t rows() const { return static_cast<std::size_t>(y.size()); }
};

struct Exclusion {
  int left;
  int right;
};

class Smoother {
 public:
  Smoother(const RowMatrix& points, const KernelSpec& spec);

  int dim() const { return d_; }
  Eigen::Index size() const { return ps_.rows(); }
  const KernelSpec& spec() const { return spec_; }
  double scaled_kernel(const double* u) const;

  //! Build a RowSet from the given site records, scaling the covariates.
  RowSet rows(const SiteSample& site, const std::vector<std::size_t>& idx, const DensityRatio& reweight = {},
              double extra_mult = 1.0) const;

  //! Local linear normal equations at every evaluation point.
  std::vector<NormalEquations> mean_equations(const RowSet& rs) const;

  struct Side {
    Eigen::MatrixXd w;  // points x rows
    std::vector<double> a0, a2, ay, cnt;
    std::vector<double> au, auy;  // points x d
    std::vector<double> auu;      // points x d x d
  };
  Side side(const RowSet& rs) const;

  //! Pair normal equations for evaluation points (k, l). The left side is
  //! centred at point k, the right side at point l.
  void pair_equations(const RowSet& left, const Side& ls, const RowSet& right, const Side& rs,
                      const std::vector<Exclusion>& excl, Eigen::Index k, Eigen::Index l,
                      NormalEquations& out) const;

 private:
  KernelSpec spec_;
  int d_;
  RowMatrix ps_;  // scaled evaluation points
  double norm_;
};

}  // namespace cate
