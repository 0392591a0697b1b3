#pragma once

#include <vector>

#include "cate/grid.hpp"

namespace cate {

enum class Normalization {
  //! <phi_k, (T_mumu + a Id) phi_l> = delta_kl
  RegularizedMuMu,
  //! <phi_k, T_mumu phi_l> = delta_kl (regression on principal component scores)
  MuMu,
};

const char* to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

struct BasisSet {
  GridPtr grid;
  double a = 0.0;
  int K = 0;
  int requested_K = 0;
  bool rank_deficient = false;
  std::vector<double> lambda;
  std::vector<DiscretizedFunction> phi;
  std::vector<DiscretizedFunction> psi;
  Normalization normalization = Normalization::RegularizedMuMu;
};

struct FpcBasis {
  GridPtr grid;
  int requested_K = 0;
  bool rank_deficient = false;
  std::vector<double> eigenvalues;
  std::vector<DiscretizedFunction> eigenfunctions;
};

struct BasisOptions {
  //! Eigenvalues at or below rank_tol * lambda_1 are dropped.
  double rank_tol = 1e-12;
  //! Most negative eigenvalue of the weighted T_mumu tolerated.
  double psd_tol = 1e-8;
};

//! Leading K solutions of T_mutau T_mutau* phi = lambda (T_mumu + a Id) phi.
//! Fewer than K usable eigenvalues truncates the basis and sets
//! rank_deficient rather than throwing.
BasisSet solve_optimal_basis(const OperatorMatrix& t_mumu, const OperatorMatrix& t_mutau, double a, int K,
                             const BasisOptions& opt = {});

//! psi(x) = sum_j H_mutau(x_j, x) phi(x_j) w_j
DiscretizedFunction compute_psi(const OperatorMatrix& t_mutau, const DiscretizedFunction& phi);

FpcBasis solve_fpc(const OperatorMatrix& t_self, int K, const BasisOptions& opt = {});

//! Predictor that regresses tau on the scores of the given principal
//! components: phi_k = xi_k / sqrt(nu_k), psi_k = T_mutau* phi_k.
BasisSet fpc_predictor(const FpcBasis& fpc, const OperatorMatrix& t_mutau);

//! IMSE of the least-squares prediction of tau_g from the scores <mu_g, phi_k>
//! implied by the operators: tr(T_tautau) - tr(C^{-1} A) with
//! C = <phi, T_mumu phi>, A = <phi, T_mutau T_mutau* phi>.
double plugin_imse(const OperatorMatrix& t_mumu, const OperatorMatrix& t_mutau, const OperatorMatrix& t_tautau,
                   const std::vector<DiscretizedFunction>& phi);

//! Apply the sign convention: the largest-magnitude grid value is positive.
//! Returns -1 if the vector was flipped, +1 otherwise.
double sign_normalize(Eigen::VectorXd& v);

}  // namespace cate
