#include "cate/smoother.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "cate/error.hpp"

namespace cate {

void NormalEquations::add(const NormalEquations& o) {
  if (p == 0) {
    *this = o;
    return;
  }
  for (int i = 0; i < p * p; ++i) gram[i] += o.gram[i];
  for (int i = 0; i < p; ++i) rhs[i] += o.rhs[i];
  mass += o.mass;
  mass_sq += o.mass_sq;
  gross_mass += o.gross_mass;
  count += o.count;
  n_obs += o.n_obs;
}

void NormalEquations::subtract(const NormalEquations& o) {
  if (o.p == 0) return;
  for (int i = 0; i < p * p; ++i) gram[i] -= o.gram[i];
  for (int i = 0; i < p; ++i) rhs[i] -= o.rhs[i];
  mass -= o.mass;
  mass_sq -= o.mass_sq;
  gross_mass -= o.gross_mass;
  count -= o.count;
  n_obs -= o.n_obs;
}

FitResult solve_intercept(const NormalEquations& ne, double min_count, double full_count, double mass_factor) {
  FitResult out;
  out.mass = ne.mass;
  const double eps_mass = mass_factor * std::numeric_limits<double>::epsilon() * std::max(1.0, ne.n_obs);
  if (ne.p == 0 || ne.count < min_count || !(ne.mass > eps_mass) ||
      (ne.gross_mass > 0.0 && ne.mass <= 1e-10 * ne.gross_mass)) {
    out.status = FitStatus::Insufficient;
    return out;
  }
  out.effective_sample_size = ne.mass_sq > 0.0 ? ne.mass * ne.mass / ne.mass_sq : 0.0;
  const int p = ne.p;
  const double nw = ne.rhs[0] / ne.gram[0];
  auto fallback = [&] {
    out.value = nw;
    out.status = FitStatus::Degenerate;
    return out;
  };
  if (ne.count < full_count) return fallback();

  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxParams, kMaxParams>;
  using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxParams, 1>;
  Vec s(p);
  for (int i = 0; i < p; ++i) {
    const double g = ne.gram[i * p + i];
    if (!(g > 0.0)) return fallback();
    s[i] = 1.0 / std::sqrt(g);
  }
  Mat a(p, p);
  Vec b(p);
  for (int i = 0; i < p; ++i) {
    for (int j = 0; j < p; ++j) a(i, j) = s[i] * ne.gram[i * p + j] * s[j];
    b[i] = s[i] * ne.rhs[i];
  }
  Eigen::LDLT<Mat> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(ldlt.rcond() > 1e-12)) return fallback();
  const Vec sol = ldlt.solve(b);
  const double v = s[0] * sol[0];
  if (!std::isfinite(v)) return fallback();
  out.value = v;
  out.status = FitStatus::Ok;
  return out;
}

Smoother::Smoother(const RowMatrix& points, const KernelSpec& spec)
    : spec_(spec), d_(static_cast<int>(points.cols())), ps_(points.rows(), points.cols()) {
  spec_.validate(d_);
  for (Eigen::Index k = 0; k < points.rows(); ++k)
    for (int j = 0; j < d_; ++j) ps_(k, j) = points(k, j) / (spec_.h * spec_.scale_of(j));
  norm_ = spec_.family == KernelFamily::Gaussian ? std::pow(2.0 * std::numbers::pi, -0.5 * d_) : std::pow(0.75, d_);
}

double Smoother::scaled_kernel(const double* u) const {
  if (spec_.family == KernelFamily::Gaussian) {
    double q = 0.0;
    for (int j = 0; j < d_; ++j) q += u[j] * u[j];
    return norm_ * std::exp(-0.5 * q);
  }
  double v = norm_;
  for (int j = 0; j < d_; ++j) {
    const double t = 1.0 - u[j] * u[j];
    if (t <= 0.0) return 0.0;
    v *= t;
  }
  return v;
}

RowSet Smoother::rows(const SiteSample& site, const std::vector<std::size_t>& idx, const DensityRatio& reweight,
                      double extra_mult) const {
  RowSet rs;
  rs.xs.resize(static_cast<Eigen::Index>(idx.size()), d_);
  rs.y.resize(static_cast<Eigen::Index>(idx.size()));
  rs.mult.resize(static_cast<Eigen::Index>(idx.size()));
  rs.source = idx;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const auto& rec = site.records[idx[r]];
    for (int j = 0; j < d_; ++j) rs.xs(r, j) = rec.x[j] / (spec_.h * spec_.scale_of(j));
    rs.y[r] = rec.y;
    double m = extra_mult;
    if (reweight) {
      m *= reweight(rec.x);
      if (!(m >= 0.0) || !std::isfinite(m)) throw Error(ErrorCode::InvalidArgument, "density ratio must be finite and nonnegative");
    }
    rs.mult[r] = m;
  }
  return rs;
}

std::vector<NormalEquations> Smoother::mean_equations(const RowSet& rs) const {
  const int p = d_ + 1;
  std::vector<NormalEquations> out(static_cast<std::size_t>(ps_.rows()));
  std::array<double, kMaxDim + 1> z{};
  std::array<double, kMaxDim> u{};
  for (Eigen::Index k = 0; k < ps_.rows(); ++k) {
    auto& ne = out[k];
    ne.p = p;
    ne.n_obs = static_cast<double>(rs.rows());
    for (std::size_t i = 0; i < rs.rows(); ++i) {
      for (int j = 0; j < d_; ++j) u[j] = rs.xs(i, j) - ps_(k, j);
      const double w = scaled_kernel(u.data()) * rs.mult[i];
      if (w == 0.0) continue;
      z[0] = 1.0;
      for (int j = 0; j < d_; ++j) z[j + 1] = u[j];
      for (int a = 0; a < p; ++a) {
        const double wa = w * z[a];
        for (int b = a; b < p; ++b) ne.gram[a * p + b] += wa * z[b];
        ne.rhs[a] += wa * rs.y[i];
      }
      ne.mass += w;
      ne.mass_sq += w * w;
      ne.count += 1.0;
    }
    for (int a = 0; a < p; ++a)
      for (int b = 0; b < a; ++b) ne.gram[a * p + b] = ne.gram[b * p + a];
  }
  return out;
}

Smoother::Side Smoother::side(const RowSet& rs) const {
  const auto m = static_cast<std::size_t>(ps_.rows());
  const auto n = static_cast<Eigen::Index>(rs.rows());
  const auto d = static_cast<std::size_t>(d_);
  Side s;
  s.w.resize(ps_.rows(), n);
  s.a0.assign(m, 0.0);
  s.a2.assign(m, 0.0);
  s.ay.assign(m, 0.0);
  s.cnt.assign(m, 0.0);
  s.au.assign(m * d, 0.0);
  s.auy.assign(m * d, 0.0);
  s.auu.assign(m * d * d, 0.0);
  std::array<double, kMaxDim> u{};
  for (std::size_t k = 0; k < m; ++k) {
    const auto kk = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < d_; ++j) u[j] = rs.xs(i, j) - ps_(kk, j);
      const double w = scaled_kernel(u.data()) * rs.mult[i];
      s.w(kk, i) = w;
      if (w == 0.0) continue;
      s.a0[k] += w;
      s.a2[k] += w * w;
      s.ay[k] += w * rs.y[i];
      s.cnt[k] += 1.0;
      for (std::size_t a = 0; a < d; ++a) {
        s.au[k * d + a] += w * u[a];
        s.auy[k * d + a] += w * u[a] * rs.y[i];
        for (std::size_t b = 0; b < d; ++b) s.auu[(k * d + a) * d + b] += w * u[a] * u[b];
      }
    }
  }
  return s;
}

void Smoother::pair_equations(const RowSet& left, const Side& ls, const RowSet& right, const Side& rs,
                              const std::vector<Exclusion>& excl, Eigen::Index k, Eigen::Index l,
                              NormalEquations& ne) const {
  const int d = d_;
  const int p = 2 * d + 1;
  const auto kk = static_cast<std::size_t>(k), ll = static_cast<std::size_t>(l);
  const double A0 = ls.a0[kk], B0 = rs.a0[ll], Ay = ls.ay[kk], By = rs.ay[ll];
  const double* Au = &ls.au[kk * d];
  const double* Bv = &rs.au[ll * d];
  const double* Auy = &ls.auy[kk * d];
  const double* Bvy = &rs.auy[ll * d];
  const double* Auu = &ls.auu[kk * d * d];
  const double* Bvv = &rs.auu[ll * d * d];

  ne = NormalEquations{};
  ne.p = p;
  auto G = [&](int r, int c) -> double& { return ne.gram[r * p + c]; };
  G(0, 0) = A0 * B0;
  for (int i = 0; i < d; ++i) {
    G(0, 1 + i) = Au[i] * B0;
    G(0, 1 + d + i) = A0 * Bv[i];
    for (int j = 0; j < d; ++j) {
      G(1 + i, 1 + j) = Auu[i * d + j] * B0;
      G(1 + i, 1 + d + j) = Au[i] * Bv[j];
      G(1 + d + i, 1 + d + j) = A0 * Bvv[i * d + j];
    }
  }
  ne.rhs[0] = Ay * By;
  for (int i = 0; i < d; ++i) {
    ne.rhs[1 + i] = Auy[i] * By;
    ne.rhs[1 + d + i] = Ay * Bvy[i];
  }
  ne.mass = A0 * B0;
  ne.gross_mass = ne.mass;
  ne.mass_sq = ls.a2[kk] * rs.a2[ll];
  ne.count = ls.cnt[kk] * rs.cnt[ll];
  ne.n_obs = static_cast<double>(left.rows()) * static_cast<double>(right.rows()) - static_cast<double>(excl.size());

  std::array<double, kMaxParams> z{};
  for (const auto& e : excl) {
    const double c = ls.w(k, e.left) * rs.w(l, e.right);
    if (c == 0.0) continue;
    z[0] = 1.0;
    for (int i = 0; i < d; ++i) {
      z[1 + i] = left.xs(e.left, i) - ps_(k, i);
      z[1 + d + i] = right.xs(e.right, i) - ps_(l, i);
    }
    const double yy = left.y[e.left] * right.y[e.right];
    for (int a = 0; a < p; ++a) {
      const double ca = c * z[a];
      for (int b = a; b < p; ++b) G(a, b) -= ca * z[b];
      ne.rhs[a] -= ca * yy;
    }
    ne.mass -= c;
    ne.mass_sq -= c * c;
    ne.count -= 1.0;
  }
  for (int a = 0; a < p; ++a)
    for (int b = 0; b < a; ++b) G(a, b) = G(b, a);
}

}  // namespace cate
