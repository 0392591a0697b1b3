#include "cate/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cate/error.hpp"

namespace cate {

std::span<const double> QuadratureGrid::point(Eigen::Index j) const {
  return {points.data() + j * d, static_cast<std::size_t>(d)};
}

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int n, double lo, double hi) {
  std::vector<double> x(n), w(n);
  const double mid = 0.5 * (hi + lo), half = 0.5 * (hi - lo);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Chebyshev-like starting guess for the i-th largest root.
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) < 1e-16) break;
    }
    {
      double p0 = 1.0, p1 = z;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (z * p1 - p0) / (z * z - 1.0);
    }
    const double wi = 2.0 / ((1.0 - z * z) * dp * dp);
    x[i] = mid - half * z;
    x[n - 1 - i] = mid + half * z;
    w[i] = w[n - 1 - i] = half * wi;
  }
  return {x, w};
}

GridPtr make_grid(int d, const Bounds& bounds, int points_per_dim, const DensitySpec& f0) {
  if (d < 1 || d > 3) throw Error(ErrorCode::UnsupportedDimension, "grid dimension " + std::to_string(d) + " not in {1,2,3}");
  if (points_per_dim < 4) throw Error(ErrorCode::InvalidConfig, "points_per_dim must be at least 4");
  if (static_cast<int>(bounds.size()) != d) throw Error(ErrorCode::InvalidConfig, "bounds length differs from dimension");
  for (const auto& [lo, hi] : bounds)
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
      throw Error(ErrorCode::InvalidConfig, "grid bounds must be finite and increasing");
  f0.validate();
  if (f0.dim() != d) throw Error(ErrorCode::InvalidConfig, "f0 dimension differs from grid dimension");

  auto g = std::make_shared<QuadratureGrid>();
  g->d = d;
  g->points_per_dim = points_per_dim;
  g->bounds = bounds;
  g->f0 = f0;
  std::vector<std::vector<double>> w1(d);
  for (int k = 0; k < d; ++k) {
    auto [x, w] = gauss_legendre(points_per_dim, bounds[k].first, bounds[k].second);
    g->nodes_1d.push_back(std::move(x));
    w1[k] = std::move(w);
  }
  Eigen::Index m = 1;
  for (int k = 0; k < d; ++k) m *= points_per_dim;
  RowMatrix pts(m, d);
  g->quad_weights.resize(m);
  g->f0_values.resize(m);
  std::vector<int> idx(d, 0);
  for (Eigen::Index j = 0; j < m; ++j) {
    Eigen::Index r = j;
    for (int k = d - 1; k >= 0; --k) {
      idx[k] = static_cast<int>(r % points_per_dim);
      r /= points_per_dim;
    }
    double q = 1.0;
    for (int k = 0; k < d; ++k) {
      pts(j, k) = g->nodes_1d[k][idx[k]];
      q *= w1[k][idx[k]];
    }
    g->quad_weights[j] = q;
    g->f0_values[j] = f0.pdf(std::span<const double>(pts.row(j).data(), d));
    if (!(g->f0_values[j] > 0.0) || !std::isfinite(g->f0_values[j]))
      throw Error(ErrorCode::InvalidConfig, "f0 must be positive at every grid node");
  }
  g->points = pts;
  g->weights = g->quad_weights.cwiseProduct(g->f0_values);
  g->weights /= g->weights.sum();
  return g;
}

bool same_grid(const QuadratureGrid& a, const QuadratureGrid& b) {
  if (&a == &b) return true;
  return a.d == b.d && a.points.rows() == b.points.rows() && a.points == b.points && a.weights == b.weights;
}

void require_same_grid(const GridPtr& a, const GridPtr& b) {
  if (!a || !b) throw Error(ErrorCode::GridMismatch, "function without a grid");
  if (!same_grid(*a, *b)) throw Error(ErrorCode::GridMismatch, "functions live on different grids");
}

DiscretizedFunction::DiscretizedFunction(GridPtr g, Eigen::VectorXd v) : grid(std::move(g)), values(std::move(v)) {
  if (!grid) throw Error(ErrorCode::GridMismatch, "function without a grid");
  if (values.size() != grid->size()) throw Error(ErrorCode::GridMismatch, "value count differs from grid size");
}

DiscretizedFunction DiscretizedFunction::constant(GridPtr g, double c) {
  const auto m = g->size();
  return DiscretizedFunction(std::move(g), Eigen::VectorXd::Constant(m, c));
}

OperatorMatrix::OperatorMatrix(GridPtr g, Eigen::MatrixXd h) : grid(std::move(g)), kernel_values(std::move(h)) {
  if (!grid) throw Error(ErrorCode::GridMismatch, "operator without a grid");
  if (kernel_values.rows() != grid->size() || kernel_values.cols() != grid->size())
    throw Error(ErrorCode::GridMismatch, "kernel matrix size differs from grid size");
}

Eigen::MatrixXd OperatorMatrix::weighted() const {
  const Eigen::VectorXd s = grid->sqrt_weights();
  // s_i s_j is formed first so a symmetric kernel gives a symmetric matrix
  return (s * s.transpose()).cwiseProduct(kernel_values);
}

OperatorMatrix OperatorMatrix::from_weighted(GridPtr g, const Eigen::MatrixXd& m) {
  const Eigen::VectorXd inv = g->sqrt_weights().cwiseInverse();
  Eigen::MatrixXd h = inv.asDiagonal() * m * inv.asDiagonal();
  return OperatorMatrix(std::move(g), std::move(h));
}

double inner_product(const DiscretizedFunction& f, const DiscretizedFunction& g) {
  require_same_grid(f.grid, g.grid);
  double s = 0.0;
  const auto& w = f.grid->weights;
  for (Eigen::Index j = 0; j < w.size(); ++j) s += f.values[j] * g.values[j] * w[j];
  return s;
}

double norm(const DiscretizedFunction& f) { return std::sqrt(inner_product(f, f)); }

DiscretizedFunction apply(const OperatorMatrix& op, const DiscretizedFunction& f) {
  require_same_grid(op.grid, f.grid);
  Eigen::VectorXd wf = f.values.cwiseProduct(op.grid->weights);
  return DiscretizedFunction(op.grid, op.kernel_values.transpose() * wf);
}

DiscretizedFunction apply_adjoint(const OperatorMatrix& op, const DiscretizedFunction& f) {
  require_same_grid(op.grid, f.grid);
  Eigen::VectorXd wf = f.values.cwiseProduct(op.grid->weights);
  return DiscretizedFunction(op.grid, op.kernel_values * wf);
}

InterpolationStencil interpolation_stencil(const QuadratureGrid& grid, std::span<const double> x) {
  if (static_cast<int>(x.size()) != grid.d) throw Error(ErrorCode::InvalidArgument, "point dimension differs from grid");
  InterpolationStencil st;
  std::vector<Eigen::Index> lo(grid.d);
  std::vector<double> t(grid.d);
  const int n = grid.points_per_dim;
  for (int k = 0; k < grid.d; ++k) {
    if (x[k] < grid.bounds[k].first || x[k] > grid.bounds[k].second) st.outside_bounds = true;
    const auto& nodes = grid.nodes_1d[k];
    const double v = std::clamp(x[k], nodes.front(), nodes.back());
    auto it = std::upper_bound(nodes.begin(), nodes.end(), v);
    auto i = static_cast<Eigen::Index>(it - nodes.begin()) - 1;
    i = std::clamp<Eigen::Index>(i, 0, n - 2);
    lo[k] = i;
    t[k] = (v - nodes[i]) / (nodes[i + 1] - nodes[i]);
  }
  const int corners = 1 << grid.d;
  st.index.reserve(corners);
  st.weight.reserve(corners);
  for (int c = 0; c < corners; ++c) {
    Eigen::Index flat = 0;
    double w = 1.0;
    for (int k = 0; k < grid.d; ++k) {
      const int bit = (c >> (grid.d - 1 - k)) & 1;
      flat = flat * n + lo[k] + bit;
      w *= bit ? t[k] : 1.0 - t[k];
    }
    st.index.push_back(flat);
    st.weight.push_back(w);
  }
  return st;
}

double interpolate(const DiscretizedFunction& f, std::span<const double> x, bool* outside_bounds) {
  const auto st = interpolation_stencil(*f.grid, x);
  if (outside_bounds) *outside_bounds = st.outside_bounds;
  double v = 0.0;
  for (std::size_t c = 0; c < st.index.size(); ++c) v += st.weight[c] * f.values[st.index[c]];
  return v;
}

}  // namespace cate
