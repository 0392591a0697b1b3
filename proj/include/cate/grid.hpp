#pragma once

#include <memory>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cate/density.hpp"

namespace cate {

using Bounds = std::vector<std::pair<double, double>>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

//! Tensor-product Gauss-Legendre rule on a box, with weights multiplied by the
//! weight density f0 and renormalized to sum to one.
//!
//! Points are ordered lexicographically with the last coordinate varying
//! fastest.
struct QuadratureGrid {
  int d = 0;
  int points_per_dim = 0;
  Bounds bounds;
  std::vector<std::vector<double>> nodes_1d;
  RowMatrix points;  // size() x d
  Eigen::VectorXd quad_weights;
  Eigen::VectorXd f0_values;
  Eigen::VectorXd weights;  // combined, sums to one
  DensitySpec f0;

  Eigen::Index size() const { return points.rows(); }
  std::span<const double> point(Eigen::Index j) const;
  Eigen::VectorXd sqrt_weights() const { return weights.array().sqrt(); }
};

using GridPtr = std::shared_ptr<const QuadratureGrid>;

//! Gauss-Legendre nodes and weights on [lo, hi].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n, double lo, double hi);

GridPtr make_grid(int d, const Bounds& bounds, int points_per_dim, const DensitySpec& f0);

bool same_grid(const QuadratureGrid& a, const QuadratureGrid& b);
void require_same_grid(const GridPtr& a, const GridPtr& b);

struct DiscretizedFunction {
  GridPtr grid;
  Eigen::VectorXd values;

  DiscretizedFunction() = default;
  DiscretizedFunction(GridPtr g, Eigen::VectorXd v);
  static DiscretizedFunction constant(GridPtr g, double c);
};

//! Kernel H(x_i, x_j) sampled on a grid. The integral operator it represents
//! integrates against the first argument: (T f)(x) = sum_j H(x_j, x) f(x_j) w_j.
struct OperatorMatrix {
  GridPtr grid;
  Eigen::MatrixXd kernel_values;

  OperatorMatrix() = default;
  OperatorMatrix(GridPtr g, Eigen::MatrixXd h);

  //! W^{1/2} H W^{1/2}
  Eigen::MatrixXd weighted() const;
  static OperatorMatrix from_weighted(GridPtr g, const Eigen::MatrixXd& m);
};

double inner_product(const DiscretizedFunction& f, const DiscretizedFunction& g);
double norm(const DiscretizedFunction& f);

//! (T f)(x) = sum_j H(x_j, x) f(x_j) w_j
DiscretizedFunction apply(const OperatorMatrix& op, const DiscretizedFunction& f);
//! (T* f)(x) = sum_j H(x, x_j) f(x_j) w_j
DiscretizedFunction apply_adjoint(const OperatorMatrix& op, const DiscretizedFunction& f);

//! Sample an arbitrary function on the grid points.
template <class F>
DiscretizedFunction sample(const GridPtr& grid, F&& f) {
  Eigen::VectorXd v(grid->size());
  for (Eigen::Index j = 0; j < grid->size(); ++j) v[j] = f(grid->point(j));
  return DiscretizedFunction(grid, std::move(v));
}

//! Multilinear interpolation between grid nodes. Coordinates outside the
//! node hull are clamped to it; `outside_bounds` is set when x lies outside
//! the grid's bounding box.
struct InterpolationStencil {
  std::vector<Eigen::Index> index;
  std::vector<double> weight;
  bool outside_bounds = false;
};

InterpolationStencil interpolation_stencil(const QuadratureGrid& grid, std::span<const double> x);
double interpolate(const DiscretizedFunction& f, std::span<const double> x, bool* outside_bounds = nullptr);

}  // namespace cate
