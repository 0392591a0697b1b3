#include "cate/basis.hpp"

#include <cmath>
#include <string>

#include "cate/error.hpp"

namespace cate {

const char* to_string(Normalization n) { return n == Normalization::MuMu ? "mumu" : "mumu_regularized"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "mumu") return Normalization::MuMu;
  if (s == "mumu_regularized") return Normalization::RegularizedMuMu;
  throw Error(ErrorCode::InvalidConfig, "unknown normalization '" + s + "'");
}

double sign_normalize(Eigen::VectorXd& v) {
  Eigen::Index arg = 0;
  double best = -1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (std::abs(v[i]) > best) {
      best = std::abs(v[i]);
      arg = i;
    }
  if (v.size() && v[arg] < 0.0) {
    v = -v;
    return -1.0;
  }
  return 1.0;
}

namespace {

Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> symmetric_eigen(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "symmetric eigendecomposition failed");
  return es;
}

void check_k(int K, Eigen::Index m) {
  if (K < 0 || K > m) throw Error(ErrorCode::InvalidArgument, "K must lie in [0, grid size]");
}

// Number of leading eigenvalues (descending) above rank_tol * lambda_1.
int usable(const std::vector<double>& desc, double rank_tol) {
  if (desc.empty() || !(desc.front() > 0.0)) return 0;
  const double cut = rank_tol * desc.front();
  int k = 0;
  while (k < static_cast<int>(desc.size()) && desc[k] > cut) ++k;
  return k;
}

}  // namespace

BasisSet solve_optimal_basis(const OperatorMatrix& t_mumu, const OperatorMatrix& t_mutau, double a, int K,
                             const BasisOptions& opt) {
  require_same_grid(t_mumu.grid, t_mutau.grid);
  const auto& grid = t_mumu.grid;
  const auto m = grid->size();
  if (!(a > 0.0) || !std::isfinite(a)) throw Error(ErrorCode::InvalidArgument, "regularization a must be positive");
  check_k(K, m);

  const auto mm = symmetric_eigen(t_mumu.weighted());
  const Eigen::VectorXd nu = mm.eigenvalues();
  if (nu.size() && nu.minCoeff() < -opt.psd_tol)
    throw Error(ErrorCode::NotPSD, "T_mumu has eigenvalue " + std::to_string(nu.minCoeff()));
  const Eigen::VectorXd inv_sqrt_diag = (nu.cwiseMax(0.0).array() + a).rsqrt();
  const Eigen::MatrixXd& q = mm.eigenvectors();
  const Eigen::MatrixXd inv_sqrt = q * inv_sqrt_diag.asDiagonal() * q.transpose();

  // lambda_k are the squared singular values of (M + aI)^{-1/2} M_mutau;
  // the SVD keeps small eigenvalues accurate relative to forming B B^T.
  const Eigen::MatrixXd b = inv_sqrt * t_mutau.weighted();
  const Eigen::BDCSVD<Eigen::MatrixXd> svd(b, Eigen::ComputeFullU);
  if (svd.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "singular value decomposition failed");

  std::vector<double> desc(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) desc[i] = svd.singularValues()[i] * svd.singularValues()[i];
  const int keep = std::min(K, usable(desc, opt.rank_tol));

  BasisSet out;
  out.grid = grid;
  out.a = a;
  out.requested_K = K;
  out.K = keep;
  out.rank_deficient = keep < K;
  const Eigen::VectorXd inv_sw = grid->sqrt_weights().cwiseInverse();
  for (int k = 0; k < keep; ++k) {
    const Eigen::VectorXd xi = svd.matrixU().col(k);
    Eigen::VectorXd phi = inv_sw.cwiseProduct(inv_sqrt * xi);
    sign_normalize(phi);
    out.lambda.push_back(desc[k]);
    out.phi.emplace_back(grid, std::move(phi));
    out.psi.push_back(compute_psi(t_mutau, out.phi.back()));
  }
  return out;
}

DiscretizedFunction compute_psi(const OperatorMatrix& t_mutau, const DiscretizedFunction& phi) {
  return apply(t_mutau, phi);
}

FpcBasis solve_fpc(const OperatorMatrix& t_self, int K, const BasisOptions& opt) {
  const auto& grid = t_self.grid;
  const auto m = grid->size();
  check_k(K, m);
  const auto es = symmetric_eigen(t_self.weighted());
  if (m && es.eigenvalues().minCoeff() < -opt.psd_tol)
    throw Error(ErrorCode::NotPSD, "operator has eigenvalue " + std::to_string(es.eigenvalues().minCoeff()));
  std::vector<double> desc(static_cast<std::size_t>(m));
  for (Eigen::Index i = 0; i < m; ++i) desc[i] = es.eigenvalues()[m - 1 - i];
  const int keep = std::min(K, usable(desc, opt.rank_tol));
  FpcBasis out;
  out.grid = grid;
  out.requested_K = K;
  out.rank_deficient = keep < K;
  const Eigen::VectorXd inv_sw = grid->sqrt_weights().cwiseInverse();
  for (int k = 0; k < keep; ++k) {
    Eigen::VectorXd f = inv_sw.cwiseProduct(es.eigenvectors().col(m - 1 - k));
    sign_normalize(f);
    out.eigenvalues.push_back(desc[k]);
    out.eigenfunctions.emplace_back(grid, std::move(f));
  }
  return out;
}

BasisSet fpc_predictor(const FpcBasis& fpc, const OperatorMatrix& t_mutau) {
  require_same_grid(fpc.grid, t_mutau.grid);
  BasisSet out;
  out.grid = fpc.grid;
  out.a = 0.0;
  out.normalization = Normalization::MuMu;
  out.requested_K = fpc.requested_K;
  out.rank_deficient = fpc.rank_deficient;
  out.K = static_cast<int>(fpc.eigenfunctions.size());
  for (int k = 0; k < out.K; ++k) {
    const double s = 1.0 / std::sqrt(fpc.eigenvalues[k]);
    out.lambda.push_back(fpc.eigenvalues[k]);
    out.phi.emplace_back(fpc.grid, fpc.eigenfunctions[k].values * s);
    out.psi.push_back(compute_psi(t_mutau, out.phi.back()));
  }
  return out;
}

double plugin_imse(const OperatorMatrix& t_mumu, const OperatorMatrix& t_mutau, const OperatorMatrix& t_tautau,
                   const std::vector<DiscretizedFunction>& phi) {
  require_same_grid(t_mumu.grid, t_mutau.grid);
  require_same_grid(t_mumu.grid, t_tautau.grid);
  const auto& grid = t_mumu.grid;
  const double total = t_tautau.weighted().trace();
  if (phi.empty()) return total;
  const auto m = grid->size();
  const Eigen::VectorXd sw = grid->sqrt_weights();
  Eigen::MatrixXd f(m, static_cast<Eigen::Index>(phi.size()));
  for (std::size_t k = 0; k < phi.size(); ++k) {
    require_same_grid(grid, phi[k].grid);
    f.col(static_cast<Eigen::Index>(k)) = sw.cwiseProduct(phi[k].values);
  }
  const Eigen::MatrixXd c = f.transpose() * t_mumu.weighted() * f;
  const Eigen::MatrixXd g = t_mutau.weighted().transpose() * f;
  const Eigen::MatrixXd a = g.transpose() * g;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(0.5 * (c + c.transpose()));
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(ldlt.rcond() > 1e-14))
    throw Error(ErrorCode::CollinearScores, "score covariance is singular");
  return total - ldlt.solve(a).trace();
}

}  // namespace cate
