#include "cate/operators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cate/error.hpp"
#include "cate/parallel.hpp"

namespace cate {

KernelSpec standardized(const KernelSpec& spec, const Dataset& ds) {
  KernelSpec out = spec;
  if (!out.scale.empty()) return out;
  std::vector<double> sum(ds.d, 0.0), sq(ds.d, 0.0);
  double n = 0.0;
  for (auto g : ds.experimental_indices())
    for (const auto& r : ds.sites[g].records) {
      for (int j = 0; j < ds.d; ++j) sum[j] += r.x[j];
      n += 1.0;
    }
  out.scale.assign(ds.d, 1.0);
  if (n < 2.0) return out;
  for (auto g : ds.experimental_indices())
    for (const auto& r : ds.sites[g].records)
      for (int j = 0; j < ds.d; ++j) sq[j] += (r.x[j] - sum[j] / n) * (r.x[j] - sum[j] / n);
  for (int j = 0; j < ds.d; ++j) {
    const double sd = std::sqrt(sq[j] / (n - 1.0));
    if (sd > 0.0 && std::isfinite(sd)) out.scale[j] = sd;
  }
  return out;
}

std::vector<std::size_t> rows_with_treatment(const SiteSample& site, int d_treat) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < site.records.size(); ++i)
    if (site.records[i].d_treat == d_treat) idx.push_back(i);
  return idx;
}

std::vector<std::size_t> rows_in_period(const SiteSample& site, int period) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < site.records.size(); ++i)
    if (site.records[i].period.value_or(0) == period) idx.push_back(i);
  return idx;
}

DensityRatio sparse_ratio(const Dataset& ds, const SiteSample& site, const QuadratureGrid& grid) {
  if (ds.sampling != Sampling::Sparse) return {};
  if (!site.covariate_density)
    throw Error(ErrorCode::InconsistentSite, "site '" + site.site_id + "' lacks a covariate density");
  DensitySpec f0 = grid.f0, fg = *site.covariate_density;
  std::string id = site.site_id;
  return [f0, fg, id](std::span<const double> x) {
    const double den = fg.pdf(x);
    if (!(den > 0.0))
      throw Error(ErrorCode::InsufficientLocalData, "unit of site '" + id + "' outside the support of its density");
    return f0.pdf(x) / den;
  };
}

namespace {

std::string grid_point_text(const QuadratureGrid* grid, Eigen::Index k) {
  std::ostringstream s;
  s << "grid point " << k;
  if (grid) {
    s << " (x=";
    for (int j = 0; j < grid->d; ++j) s << (j ? "," : "") << grid->points(k, j);
    s << ")";
  }
  return s.str();
}

void note(LocalFitDiagnostics* diag, const FitResult& fit, Eigen::Index index) {
  if (!diag) return;
  diag->effective_sample_size = std::min(diag->effective_sample_size, fit.effective_sample_size);
  diag->min_local_mass = std::min(diag->min_local_mass, fit.mass);
  if (fit.status == FitStatus::Degenerate) diag->degenerate_points.push_back(index);
}

Eigen::VectorXd curve_from(const std::vector<NormalEquations>& eqs, int d, double factor, const std::string& label,
                           const QuadratureGrid* grid, LocalFitDiagnostics* diag) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(eqs.size()));
  for (std::size_t k = 0; k < eqs.size(); ++k) {
    const auto fit = solve_intercept(eqs[k], d + 1, d + 2, factor);
    const auto kk = static_cast<Eigen::Index>(k);
    if (fit.status == FitStatus::Insufficient)
      throw Error(ErrorCode::InsufficientLocalData, label + ", " + grid_point_text(grid, kk));
    note(diag, fit, kk);
    v[kk] = fit.value;
  }
  return v;
}

// Surface values are solved per pair; `same` surfaces are mirrored.
struct SurfaceSolver {
  const Smoother& sm;
  std::string label;
  LocalFitDiagnostics* diag;
  bool same;
  Eigen::MatrixXd out;

  void operator()(Eigen::Index k, Eigen::Index l, const NormalEquations& ne) {
    const int d = sm.dim();
    const auto fit = solve_intercept(ne, 1.0, 2.0 * d + 2.0, sm.spec().mass_factor);
    if (fit.status == FitStatus::Insufficient)
      throw Error(ErrorCode::InsufficientLocalData,
                  label + ", grid pair (" + std::to_string(k) + "," + std::to_string(l) + ")");
    note(diag, fit, k * out.rows() + l);
    out(k, l) = fit.value;
    if (same) out(l, k) = fit.value;
  }
};

}  // namespace

Eigen::VectorXd site_curve(const Smoother& sm, const SiteSample& site, const std::vector<std::size_t>& rows,
                           const std::string& label, LocalFitDiagnostics* diag) {
  const auto rs = sm.rows(site, rows);
  return curve_from(sm.mean_equations(rs), sm.dim(), sm.spec().mass_factor, label, nullptr, diag);
}

Eigen::VectorXd solve_curve(const Smoother& sm, const std::vector<NormalEquations>& eqs, const std::string& label,
                            LocalFitDiagnostics* diag) {
  return curve_from(eqs, sm.dim(), sm.spec().mass_factor, label, nullptr, diag);
}

Eigen::MatrixXd solve_surface(const Smoother& sm, const std::vector<NormalEquations>& eqs, bool same,
                              const std::string& label, LocalFitDiagnostics* diag) {
  const auto m = sm.size();
  SurfaceSolver solver{sm, label, diag, same, Eigen::MatrixXd(m, m)};
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index l = same ? k : 0; l < m; ++l) solver(k, l, eqs[static_cast<std::size_t>(k * m + l)]);
  return std::move(solver.out);
}

PairSelection within_pairs(const SiteSample& site, int d1, int d2) {
  PairSelection p;
  p.left = rows_with_treatment(site, std::min(d1, d2));
  p.same = d1 == d2;
  if (!p.same) p.right = rows_with_treatment(site, std::max(d1, d2));
  return p;
}

PairSelection cluster_pairs(const SiteSample& site, bool baseline_both) {
  PairSelection p;
  p.left = rows_in_period(site, 0);
  if (baseline_both) {
    p.same = true;
  } else {
    p.right = rows_in_period(site, 1);
    p.exclude_same_unit = true;
  }
  return p;
}

void for_each_pair_equation(const Smoother& sm, const SiteSample& site, const PairSelection& pairs,
                            const DensityRatio& ratio, double left_mult, double right_mult,
                            const std::function<void(Eigen::Index, Eigen::Index, const NormalEquations&)>& fn) {
  if (site.records.size() < 2) throw Error(ErrorCode::NoPairs, "site '" + site.site_id + "' has fewer than two units");
  const auto m = sm.size();
  const auto left = sm.rows(site, pairs.left, ratio, left_mult);
  const auto ls = sm.side(left);
  NormalEquations ne;
  if (pairs.same) {
    std::vector<Exclusion> excl;
    for (int i = 0; i < static_cast<int>(left.rows()); ++i) excl.push_back({i, i});
    for (Eigen::Index k = 0; k < m; ++k)
      for (Eigen::Index l = k; l < m; ++l) {
        sm.pair_equations(left, ls, left, ls, excl, k, l, ne);
        fn(k, l, ne);
      }
    return;
  }
  const auto right = sm.rows(site, pairs.right, ratio, right_mult);
  const auto rs = sm.side(right);
  std::vector<Exclusion> excl;
  if (pairs.exclude_same_unit) {
    std::map<std::string, int> pos;
    for (std::size_t i = 0; i < pairs.left.size(); ++i) {
      const auto& id = site.records[pairs.left[i]].unit_id;
      if (id) pos.emplace(*id, static_cast<int>(i));
    }
    for (std::size_t j = 0; j < pairs.right.size(); ++j) {
      const auto& id = site.records[pairs.right[j]].unit_id;
      if (!id) continue;
      if (auto it = pos.find(*id); it != pos.end()) excl.push_back({it->second, static_cast<int>(j)});
    }
  }
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index l = 0; l < m; ++l) {
      sm.pair_equations(left, ls, right, rs, excl, k, l, ne);
      fn(k, l, ne);
    }
}

Eigen::MatrixXd site_surface(const Smoother& sm, const SiteSample& site, const PairSelection& pairs,
                             const std::string& label, LocalFitDiagnostics* diag) {
  SurfaceSolver solver{sm, label, diag, pairs.same, Eigen::MatrixXd(sm.size(), sm.size())};
  for_each_pair_equation(sm, site, pairs, {}, 1.0, 1.0,
                         [&](Eigen::Index k, Eigen::Index l, const NormalEquations& ne) { solver(k, l, ne); });
  return std::move(solver.out);
}

namespace {

using RowSelector = std::function<std::vector<std::size_t>(const SiteSample&)>;
using PairSelector = std::function<PairSelection(const SiteSample&)>;

std::string site_label(const SiteSample& s, const std::string& what) { return "site '" + s.site_id + "', " + what; }

// Mean curve over a group of sites: equal-weight average of per-site fits
// (dense) or a single pooled fit (sparse).
Eigen::VectorXd group_curve(const Dataset& ds, const GridPtr& grid, const Smoother& sm,
                            const std::vector<std::size_t>& group, const RowSelector& select, const std::string& what,
                            LocalFitDiagnostics* diag, std::vector<std::optional<Eigen::VectorXd>>* per_site) {
  const auto m = grid->size();
  if (group.empty()) throw Error(ErrorCode::InvalidArgument, "empty site group for " + what);
  const bool sparse = ds.sampling == Sampling::Sparse;
  std::vector<std::optional<Eigen::VectorXd>> curves(group.size());
  std::vector<std::vector<NormalEquations>> eqs(group.size());
  std::vector<LocalFitDiagnostics> diags(group.size());
  parallel_for(group.size(), [&](std::size_t i) {
    const auto& site = ds.sites[group[i]];
    const auto rows = select(site);
    if (sparse) {
      const double mult = rows.empty() ? 1.0 : 1.0 / static_cast<double>(rows.size());
      eqs[i] = sm.mean_equations(sm.rows(site, rows, sparse_ratio(ds, site, *grid), mult));
      if (per_site) {
        try {
          curves[i] = curve_from(sm.mean_equations(sm.rows(site, rows)), sm.dim(), sm.spec().mass_factor,
                                 site_label(site, what), grid.get(), nullptr);
        } catch (const Error& e) {
          if (e.code() != ErrorCode::InsufficientLocalData) throw;
        }
      }
    } else {
      curves[i] = curve_from(sm.mean_equations(sm.rows(site, rows)), sm.dim(), sm.spec().mass_factor,
                             site_label(site, what), grid.get(), &diags[i]);
    }
  });
  if (per_site) *per_site = curves;
  if (sparse) {
    std::vector<NormalEquations> total(static_cast<std::size_t>(m));
    for (const auto& e : eqs)
      for (Eigen::Index k = 0; k < m; ++k) total[k].add(e[k]);
    LocalFitDiagnostics dg;
    auto v = curve_from(total, sm.dim(), sm.spec().mass_factor, "pooled " + what, grid.get(), &dg);
    if (diag) diag->merge(dg);
    return v;
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(m);
  for (std::size_t i = 0; i < group.size(); ++i) {
    sum += *curves[i];
    if (diag) diag->merge(diags[i]);
  }
  return sum / static_cast<double>(group.size());
}

// Second-moment surface over a group of sites, averaged or pooled like
// group_curve. Sites are processed in chunks so memory stays bounded.
Eigen::MatrixXd group_surface(const Dataset& ds, const GridPtr& grid, const Smoother& sm,
                              const std::vector<std::size_t>& group, const PairSelector& select,
                              const std::string& what, LocalFitDiagnostics* diag) {
  const auto m = grid->size();
  if (group.empty()) throw Error(ErrorCode::InvalidArgument, "empty site group for " + what);
  const bool sparse = ds.sampling == Sampling::Sparse;
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, num_threads()));
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(m, m);
  std::vector<NormalEquations> pooled;
  if (sparse) pooled.resize(static_cast<std::size_t>(m * m));
  bool same = false;
  for (std::size_t start = 0; start < group.size(); start += chunk) {
    const std::size_t count = std::min(chunk, group.size() - start);
    std::vector<Eigen::MatrixXd> surf(count);
    std::vector<std::vector<NormalEquations>> eqs(count);
    std::vector<LocalFitDiagnostics> diags(count);
    std::vector<char> same_flag(count, 0);
    parallel_for(count, [&](std::size_t i) {
      const auto& site = ds.sites[group[start + i]];
      const auto pairs = select(site);
      same_flag[i] = pairs.same;
      if (sparse) {
        eqs[i].resize(static_cast<std::size_t>(m * m));
        const double lm = pairs.left.empty() ? 1.0 : 1.0 / static_cast<double>(pairs.left.size());
        const double rm = pairs.same ? lm : (pairs.right.empty() ? 1.0 : 1.0 / static_cast<double>(pairs.right.size()));
        for_each_pair_equation(sm, site, pairs, sparse_ratio(ds, site, *grid), lm, rm,
                               [&](Eigen::Index k, Eigen::Index l, const NormalEquations& ne) {
                                 eqs[i][static_cast<std::size_t>(k * m + l)] = ne;
                               });
      } else {
        surf[i] = site_surface(sm, site, pairs, site_label(site, what), &diags[i]);
      }
    });
    for (std::size_t i = 0; i < count; ++i) {
      same = same_flag[i];
      if (sparse) {
        for (std::size_t q = 0; q < pooled.size(); ++q)
          if (eqs[i][q].p) pooled[q].add(eqs[i][q]);
      } else {
        sum += surf[i];
        if (diag) diag->merge(diags[i]);
      }
    }
  }
  if (!sparse) return sum / static_cast<double>(group.size());
  return solve_surface(sm, pooled, same, "pooled " + what, diag);
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& h) { return 0.5 * (h + h.transpose()); }

std::vector<std::size_t> clusters_with(const Dataset& ds, int treated) {
  std::vector<std::size_t> out;
  for (auto g : ds.experimental_indices())
    if (ds.sites[g].cluster_treatment.value_or(0) == treated) out.push_back(g);
  return out;
}

}  // namespace

MeanEstimates estimate_mean_functions(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_mu) {
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const Smoother sm(grid->points, spec_mu);
  const auto exp = ds.experimental_indices();
  const auto target = ds.target_index();
  MeanEstimates out;
  out.sites.resize(ds.sites.size());
  for (std::size_t g = 0; g < ds.sites.size(); ++g) out.sites[g].site_id = ds.sites[g].site_id;

  auto wrap = [&](const Eigen::VectorXd& v) { return DiscretizedFunction(grid, v); };
  auto store = [&](const std::vector<std::size_t>& group, const std::vector<std::optional<Eigen::VectorXd>>& curves,
                   bool second) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (!curves[i]) continue;
      auto& fit = out.sites[group[i]];
      (second ? fit.mu1 : fit.mu0) = wrap(*curves[i]);
    }
  };
  std::vector<std::optional<Eigen::VectorXd>> per;

  if (ds.design == Design::WithinCluster) {
    auto arm0 = [](const SiteSample& s) { return rows_with_treatment(s, 0); };
    auto arm1 = [](const SiteSample& s) { return rows_with_treatment(s, 1); };
    out.mu0 = wrap(group_curve(ds, grid, sm, exp, arm0, "D=0", &out.diagnostics, &per));
    store(exp, per, false);
    out.mu1 = wrap(group_curve(ds, grid, sm, exp, arm1, "D=1", &out.diagnostics, &per));
    store(exp, per, true);
  } else {
    const auto treated = clusters_with(ds, 1), control = clusters_with(ds, 0);
    if (treated.empty()) throw Error(ErrorCode::NoTreatedClusters, "no treated clusters");
    if (control.empty()) throw Error(ErrorCode::NoControlClusters, "no control clusters");
    auto base = [](const SiteSample& s) { return rows_in_period(s, 0); };
    auto follow = [](const SiteSample& s) { return rows_in_period(s, 1); };
    out.mu0 = wrap(group_curve(ds, grid, sm, exp, base, "baseline", &out.diagnostics, &per));
    store(exp, per, false);
    out.mu1 = wrap(group_curve(ds, grid, sm, treated, follow, "follow-up", &out.diagnostics, &per));
    store(treated, per, true);
    const auto c1 = group_curve(ds, grid, sm, control, follow, "follow-up", &out.diagnostics, &per);
    store(control, per, true);
    out.tau = wrap(out.mu1.values - c1);
  }
  if (ds.design == Design::WithinCluster) out.tau = wrap(out.mu1.values - out.mu0.values);

  const auto& ts = ds.sites[target];
  const auto target_rows = ds.design == Design::WithinCluster ? rows_with_treatment(ts, 0) : rows_in_period(ts, 0);
  out.sites[target].mu0 =
      wrap(site_curve(sm, ts, target_rows, site_label(ts, "target baseline"), &out.sites[target].diag0));
  return out;
}

CovarianceEstimates estimate_covariance_kernels(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_H) {
  if (ds.design != Design::WithinCluster)
    throw Error(ErrorCode::InvalidArgument, "estimate_covariance_kernels needs the within-cluster design");
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const Smoother sm(grid->points, spec_H);
  const auto exp = ds.experimental_indices();
  CovarianceEstimates out;
  auto arm = [](int d) { return [d](const SiteSample& s) { return rows_with_treatment(s, d); }; };
  auto pairs = [](int d1, int d2) { return [d1, d2](const SiteSample& s) { return within_pairs(s, d1, d2); }; };
  const Eigen::VectorXd mu0 = group_curve(ds, grid, sm, exp, arm(0), "D=0", &out.diagnostics, nullptr);
  const Eigen::VectorXd mu1 = group_curve(ds, grid, sm, exp, arm(1), "D=1", &out.diagnostics, nullptr);
  const Eigen::MatrixXd h00 =
      group_surface(ds, grid, sm, exp, pairs(0, 0), "pairs (0,0)", &out.diagnostics) - mu0 * mu0.transpose();
  const Eigen::MatrixXd h01 =
      group_surface(ds, grid, sm, exp, pairs(0, 1), "pairs (0,1)", &out.diagnostics) - mu0 * mu1.transpose();
  const Eigen::MatrixXd h11 =
      group_surface(ds, grid, sm, exp, pairs(1, 1), "pairs (1,1)", &out.diagnostics) - mu1 * mu1.transpose();
  out.H_mumu = OperatorMatrix(grid, symmetrize(h00));
  out.H_mutau = OperatorMatrix(grid, h01 - h00);
  out.H_tautau = OperatorMatrix(grid, symmetrize(h11 - h01 - h01.transpose() + h00));
  return out;
}

CovarianceEstimates estimate_covariance_cluster_design(const Dataset& ds, const GridPtr& grid,
                                                       const KernelSpec& spec_H) {
  if (ds.design != Design::ClusterLevel)
    throw Error(ErrorCode::InvalidArgument, "estimate_covariance_cluster_design needs the cluster-level design");
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const auto treated = clusters_with(ds, 1), control = clusters_with(ds, 0);
  if (treated.empty()) throw Error(ErrorCode::NoTreatedClusters, "no treated clusters");
  if (control.empty()) throw Error(ErrorCode::NoControlClusters, "no control clusters");
  const Smoother sm(grid->points, spec_H);
  const auto exp = ds.experimental_indices();
  CovarianceEstimates out;
  auto base = [](const SiteSample& s) { return rows_in_period(s, 0); };
  auto follow = [](const SiteSample& s) { return rows_in_period(s, 1); };
  auto base_pairs = [](const SiteSample& s) { return cluster_pairs(s, true); };
  auto cross_pairs = [](const SiteSample& s) { return cluster_pairs(s, false); };

  const Eigen::VectorXd mu0 = group_curve(ds, grid, sm, exp, base, "baseline", &out.diagnostics, nullptr);
  const Eigen::MatrixXd hmm =
      group_surface(ds, grid, sm, exp, base_pairs, "baseline pairs", &out.diagnostics) - mu0 * mu0.transpose();

  auto cross = [&](const std::vector<std::size_t>& group, const std::string& what) {
    const Eigen::VectorXd b = group_curve(ds, grid, sm, group, base, "baseline", &out.diagnostics, nullptr);
    const Eigen::VectorXd f = group_curve(ds, grid, sm, group, follow, "follow-up", &out.diagnostics, nullptr);
    return Eigen::MatrixXd(group_surface(ds, grid, sm, group, cross_pairs, what, &out.diagnostics) - b * f.transpose());
  };
  const Eigen::MatrixXd ht = cross(treated, "treated cross-period pairs");
  const Eigen::MatrixXd hc = cross(control, "control cross-period pairs");
  out.H_mumu = OperatorMatrix(grid, symmetrize(hmm));
  out.H_mutau = OperatorMatrix(grid, ht - hc);
  return out;
}

CovarianceEstimates estimate_covariances(const Dataset& ds, const GridPtr& grid, const KernelSpec& spec_H) {
  return ds.design == Design::WithinCluster ? estimate_covariance_kernels(ds, grid, spec_H)
                                            : estimate_covariance_cluster_design(ds, grid, spec_H);
}

PsdProjection psd_project(const OperatorMatrix& m) {
  const Eigen::MatrixXd w = m.weighted();
  const Eigen::MatrixXd ws = 0.5 * (w + w.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ws);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NotPSD, "eigendecomposition failed");
  const Eigen::VectorXd ev = es.eigenvalues();
  if (ev.minCoeff() >= 0.0) return {m, 0.0};
  double clamped = 0.0;
  Eigen::VectorXd pos = ev;
  for (Eigen::Index i = 0; i < pos.size(); ++i)
    if (pos[i] < 0.0) {
      clamped += -pos[i];
      pos[i] = 0.0;
    }
  const auto& v = es.eigenvectors();
  Eigen::MatrixXd r = v * pos.asDiagonal() * v.transpose();
  r = 0.5 * (r + r.transpose());
  return {OperatorMatrix::from_weighted(m.grid, r), clamped};
}

}  // namespace cate
