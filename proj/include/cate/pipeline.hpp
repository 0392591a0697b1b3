#pragma once

// End-to-end estimation and prediction on a Dataset, shared by the command
// line tool and the acceptance tests.

#include <optional>
#include <string>
#include <vector>

#include "cate/basis.hpp"
#include "cate/dataset.hpp"
#include "cate/grid.hpp"
#include "cate/kernel.hpp"
#include "cate/operators.hpp"
#include "cate/transfer.hpp"

namespace cate {

enum class WeightDensity {
  //! Product Gaussian fitted to pooled experimental covariates.
  PooledGaussian,
  //! Product Gaussian fitted to the target site's covariates.
  TargetGaussian,
  Uniform,
};

const char* to_string(WeightDensity w);
WeightDensity weight_density_from_string(const std::string& s);

struct GridSettings {
  int points_per_dim = 16;
  //! Default: pooled experimental quantiles trim and 1 - trim per coordinate.
  std::optional<Bounds> bounds;
  double trim = 0.025;
  WeightDensity weight = WeightDensity::PooledGaussian;
};

GridPtr build_grid(const Dataset& ds, const GridSettings& settings);

struct EstimateSettings {
  GridSettings grid;
  //! Bandwidths in standardized units; scale is filled from the data.
  KernelSpec kernel_mu;
  KernelSpec kernel_H;
  double a = 0.1;
  int K = 4;
  BasisOptions basis;
};

struct EstimateResult {
  GridPtr grid;
  KernelSpec spec_mu, spec_H;
  MeanEstimates means;
  CovarianceEstimates cov;
  //! Positive part of the estimated H_mumu used by the basis solver.
  OperatorMatrix H_mumu_psd;
  double clamped_mass = 0.0;
  BasisSet basis;
  std::string target_id;
  std::vector<std::string> warnings;
};

EstimateResult run_estimate(const Dataset& ds, const EstimateSettings& settings);
EstimateResult run_estimate(const Dataset& ds, const GridPtr& grid, const EstimateSettings& settings);

struct PredictSettings {
  //! Truncation levels to report; empty means 0..K.
  std::vector<int> K_use;
  bool apply_factor = true;
};

struct PredictionReport {
  ScoreVector scores;
  std::vector<CatePrediction> predictions;  // one per K_use
  //! Mean centred prediction over the target units, per K_use.
  std::vector<double> site_average;
  std::size_t out_of_range = 0;
};

//! mu_target: the target's baseline curve; units: target covariates.
PredictionReport run_predict(const DiscretizedFunction& mu_target, const DiscretizedFunction& mu0,
                             const DiscretizedFunction& tau, const BasisSet& basis, const std::string& target_id,
                             const std::vector<std::vector<double>>& units, const PredictSettings& settings);
PredictionReport run_predict(const EstimateResult& est, const Dataset& ds, const PredictSettings& settings);

//! Covariate rows of one site's baseline units.
std::vector<std::vector<double>> baseline_units(const Dataset& ds, std::size_t site);

}  // namespace cate
