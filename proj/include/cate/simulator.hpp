#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cate/basis.hpp"
#include "cate/dataset.hpp"
#include "cate/grid.hpp"
#include "cate/kernel.hpp"

namespace cate {

enum class FactorKind { Monomial, Sin, Cos, Legendre };

//! One coordinate factor of a product term.
//!   Monomial  x^order
//!   Sin/Cos   sin/cos(2 pi freq x + phase)
//!   Legendre  sqrt(2 order + 1) P_order(2 (x - lo) / (hi - lo) - 1), orthonormal
//!             under the uniform density on [lo, hi]
struct Factor {
  FactorKind kind = FactorKind::Monomial;
  int coord = 0;
  int order = 1;
  double freq = 1.0;
  double phase = 0.0;
  double lo = 0.0;
  double hi = 1.0;

  double operator()(std::span<const double> x) const;
};

struct Term {
  double coef = 1.0;
  std::vector<Factor> factors;  // empty means the constant coef
};

struct AnalyticFunction {
  std::vector<Term> terms;

  double operator()(std::span<const double> x) const;
  static AnalyticFunction constant(double c);
  static AnalyticFunction legendre(int coord, int order, double lo = 0.0, double hi = 1.0, double coef = 1.0);
};

struct CovariateModel {
  //! Uniform on the box, or a per-site truncated Gaussian on it.
  DensityFamily family = DensityFamily::Uniform;
  std::vector<double> lower;
  std::vector<double> upper;
  //! Truncated Gaussian: sd per coordinate, and the largest per-site shift
  //! of the mean from the box centre as a fraction of the box width.
  std::vector<double> sd;
  double max_shift = 0.0;
};

struct PropensityModel {
  double base = 0.5;
  //! Per-site offset drawn from U(-spread, spread).
  double spread = 0.0;
  //! Linear tilt in the first covariate around the box centre.
  double slope = 0.0;
  double delta = 0.05;
};

struct PopulationConfig {
  int G = 20;
  int d = 1;
  double sigma = 0.0;
  AnalyticFunction mu0;
  AnalyticFunction tau;
  //! Components of mu_g(.;0) - mu(.;0) and of tau_g - tau.
  std::vector<AnalyticFunction> f;
  std::vector<AnalyticFunction> h;
  //! Scale of each m column, signal loading b = m B^T + noise.
  std::vector<double> m_sd;
  std::optional<Eigen::MatrixXd> B;  // L x L, defaults to the identity
  std::vector<double> b_noise_sd;    // defaults to zero
  //! Draw coefficients with exactly unit empirical covariance (needs G > 2L).
  bool exact_moments = false;
  //! Explicit G x L coefficients; columns are centred after loading.
  std::optional<Eigen::MatrixXd> m;
  std::optional<Eigen::MatrixXd> b;
  CovariateModel covariates;
  PropensityModel propensity;

  int L() const { return static_cast<int>(f.size()); }
  void validate() const;
};

struct SyntheticPopulation {
  PopulationConfig config;
  std::uint64_t seed = 0;
  Eigen::MatrixXd m;  // G x L, columns mean zero
  Eigen::MatrixXd b;
  std::vector<DensitySpec> site_density;
  std::vector<double> propensity_offset;

  int G() const { return static_cast<int>(m.rows()); }
  //! mu_g(x; d)
  double mu(int g, std::span<const double> x, int d) const;
  double tau(int g, std::span<const double> x) const;
  double propensity(int g, std::span<const double> x) const;
  //! Population means over all G sites.
  double mean_mu(std::span<const double> x, int d) const;
  double mean_tau(std::span<const double> x) const;
};

SyntheticPopulation generate_population(const PopulationConfig& config, std::uint64_t seed);

struct AssignmentProtocol {
  Design design = Design::WithinCluster;
  //! Cluster-level design: floor(share * E + 1/2) of the E experimental
  //! sites are treated.
  double share_treated = 0.5;
  std::uint64_t seed = 0;
  //! Drawn uniformly when unset.
  std::optional<int> target;
  //! Sparse sampling attaches each site's covariate density to the Dataset.
  Sampling sampling = Sampling::Dense;
};

//! Site ids are "s000", "s001", ...; unit ids "u0", "u1", ...
Dataset sample_dataset(const SyntheticPopulation& pop, int n, const AssignmentProtocol& protocol);
std::string synthetic_site_id(int g);

struct OracleOperators {
  OperatorMatrix H_mumu, H_mutau, H_tautau;
  DiscretizedFunction mu0, mu1, tau;
  std::vector<DiscretizedFunction> site_mu0;  // mu_g(.; 0)
  std::vector<DiscretizedFunction> site_tau;
};

OracleOperators oracle_operators(const SyntheticPopulation& pop, const GridPtr& grid);

//! Least-squares prediction of tau_g - tau from the scores <mu_g - mu, phi_k>
//! across all sites, integrated residual mean square. Throws CollinearScores
//! when phi is linearly dependent on the grid; score columns that vanish
//! relative to their Cauchy-Schwarz bound drop out of the regression.
double oracle_imse(const SyntheticPopulation& pop, const GridPtr& grid, const std::vector<DiscretizedFunction>& phi);
double oracle_imse(const OracleOperators& oracle, const std::vector<DiscretizedFunction>& phi);

struct RateConfig {
  PopulationConfig population;
  Design design = Design::WithinCluster;
  KernelFamily kernel = KernelFamily::Gaussian;
  //! h = h_constant * (log n / (G n))^{1/(4+d)}, in units of the covariate sd.
  double h_constant = 1.0;
  int points_per_dim = 24;
  double a = 0.1;
  //! Compare against the oracle over the experimental sites only, which
  //! drops the finite-population term contributed by the target draw.
  bool reference_excludes_target = false;
};

struct RateRow {
  int G = 0;
  int n = 0;
  double h = 0.0;
  double mu_error = 0.0;
  double H_error = 0.0;
  double phi_error = 0.0;
  double lambda_error = 0.0;
  std::vector<double> H_errors;  // one per replication
};

struct RateTable {
  int reps = 0;
  std::uint64_t seed = 0;
  std::vector<RateRow> rows;
};

double rate_rule_bandwidth(double h_constant, int G, double n, int d);

RateTable rate_experiment(const RateConfig& config, const std::vector<std::pair<int, int>>& ladder, int reps,
                          std::uint64_t seed);

std::string format_rate_csv(const RateTable& table);

}  // namespace cate
