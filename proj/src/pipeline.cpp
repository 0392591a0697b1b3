#include "cate/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "cate/error.hpp"

namespace cate {

const char* to_string(WeightDensity w) {
  switch (w) {
    case WeightDensity::PooledGaussian:
      return "pooled_gaussian";
    case WeightDensity::TargetGaussian:
      return "target_gaussian";
    case WeightDensity::Uniform:
      return "uniform";
  }
  return "pooled_gaussian";
}

WeightDensity weight_density_from_string(const std::string& s) {
  if (s == "pooled_gaussian") return WeightDensity::PooledGaussian;
  if (s == "target_gaussian") return WeightDensity::TargetGaussian;
  if (s == "uniform") return WeightDensity::Uniform;
  throw Error(ErrorCode::InvalidConfig, "unknown weight density '" + s + "'");
}

namespace {

// Linear interpolation between order statistics.
double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

std::vector<std::vector<double>> covariates_of(const Dataset& ds, const std::vector<std::size_t>& sites) {
  std::vector<std::vector<double>> xs;
  for (auto g : sites)
    for (const auto& r : ds.sites[g].records)
      if (r.period.value_or(0) == 0) xs.push_back(r.x);
  return xs;
}

}  // namespace

GridPtr build_grid(const Dataset& ds, const GridSettings& settings) {
  const auto pooled = covariates_of(ds, ds.experimental_indices());
  if (pooled.size() < 2) throw Error(ErrorCode::InsufficientLocalData, "too few experimental units for a grid");
  Bounds bounds;
  if (settings.bounds) {
    bounds = *settings.bounds;
  } else {
    if (!(settings.trim >= 0.0 && settings.trim < 0.5)) throw Error(ErrorCode::InvalidConfig, "trim must lie in [0, 0.5)");
    for (int j = 0; j < ds.d; ++j) {
      std::vector<double> col;
      for (const auto& x : pooled) col.push_back(x[j]);
      const double lo = quantile(col, settings.trim);
      bounds.emplace_back(lo, quantile(std::move(col), 1.0 - settings.trim));
    }
  }
  if (static_cast<int>(bounds.size()) != ds.d) throw Error(ErrorCode::InvalidConfig, "grid bounds must have d entries");
  for (const auto& [lo, hi] : bounds)
    if (!(hi > lo)) throw Error(ErrorCode::InvalidConfig, "grid bounds must have lower < upper");
  DensitySpec f0;
  switch (settings.weight) {
    case WeightDensity::PooledGaussian:
      f0 = fit_density(DensityFamily::Gaussian, pooled);
      break;
    case WeightDensity::TargetGaussian:
      f0 = fit_density(DensityFamily::Gaussian, covariates_of(ds, {ds.target_index()}));
      break;
    case WeightDensity::Uniform: {
      std::vector<double> lo, hi;
      for (const auto& [l, h] : bounds) {
        lo.push_back(l);
        hi.push_back(h);
      }
      f0 = uniform_density(lo, hi);
      break;
    }
  }
  return make_grid(ds.d, bounds, settings.points_per_dim, f0);
}

EstimateResult run_estimate(const Dataset& ds, const EstimateSettings& settings) {
  validate(ds);
  return run_estimate(ds, build_grid(ds, settings.grid), settings);
}

EstimateResult run_estimate(const Dataset& ds, const GridPtr& grid, const EstimateSettings& settings) {
  validate(ds);
  if (settings.K < 0 || settings.K > grid->size())
    throw Error(ErrorCode::InvalidArgument, "K must lie in [0, grid size]; got " + std::to_string(settings.K));
  if (!(settings.a > 0.0 && settings.a < 1.0)) throw Error(ErrorCode::InvalidArgument, "a must lie in (0, 1)");
  EstimateResult r;
  r.grid = grid;
  r.target_id = ds.sites[ds.target_index()].site_id;
  r.spec_mu = standardized(settings.kernel_mu, ds);
  r.spec_H = standardized(settings.kernel_H, ds);
  r.means = estimate_mean_functions(ds, grid, r.spec_mu);
  r.cov = estimate_covariances(ds, grid, r.spec_H);
  auto proj = psd_project(r.cov.H_mumu);
  r.H_mumu_psd = std::move(proj.op);
  r.clamped_mass = proj.clamped_mass;
  r.basis = solve_optimal_basis(r.H_mumu_psd, r.cov.H_mutau, settings.a, settings.K, settings.basis);
  if (r.basis.rank_deficient)
    r.warnings.push_back("RankDeficient: basis truncated to K=" + std::to_string(r.basis.K) + " of " +
                         std::to_string(r.basis.requested_K) + " requested");
  if (!r.means.diagnostics.degenerate_points.empty() || !r.cov.diagnostics.degenerate_points.empty())
    r.warnings.push_back("local fits fell back to kernel-weighted means at " +
                         std::to_string(r.means.diagnostics.degenerate_points.size() +
                                        r.cov.diagnostics.degenerate_points.size()) +
                         " points");
  return r;
}

std::vector<std::vector<double>> baseline_units(const Dataset& ds, std::size_t site) {
  return covariates_of(ds, {site});
}

PredictionReport run_predict(const DiscretizedFunction& mu_target, const DiscretizedFunction& mu0,
                             const DiscretizedFunction& tau, const BasisSet& basis, const std::string& target_id,
                             const std::vector<std::vector<double>>& units, const PredictSettings& settings) {
  std::vector<int> ks = settings.K_use;
  if (ks.empty())
    for (int k = 0; k <= basis.K; ++k) ks.push_back(k);
  PredictionReport r;
  r.scores = compute_scores(mu_target, mu0, basis, settings.apply_factor, target_id);
  for (int k : ks) {
    if (k < 0 || k > basis.K)
      throw Error(ErrorCode::InvalidArgument, "K_use " + std::to_string(k) + " outside [0, " + std::to_string(basis.K) + "]");
    auto p = predict_cate(r.scores, tau, basis, k);
    if (!units.empty()) {
      const auto avg = site_average_effect(p, units);
      r.site_average.push_back(avg.value);
      r.out_of_range = avg.out_of_range.size();
    }
    r.predictions.push_back(std::move(p));
  }
  return r;
}

PredictionReport run_predict(const EstimateResult& est, const Dataset& ds, const PredictSettings& settings) {
  const auto t = ds.target_index();
  const auto& fit = est.means.sites.at(t);
  return run_predict(*fit.mu0, est.means.mu0, est.means.tau, est.basis, est.target_id, baseline_units(ds, t), settings);
}

}  // namespace cate
