#include "cate/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>

#include "cate/error.hpp"
#include "cate/operators.hpp"
#include "cate/parallel.hpp"
#include "cate/smoother.hpp"
#include "cate/transfer.hpp"

namespace cate {

const char* to_string(CvLoss loss) { return loss == CvLoss::HeldOutOutcomes ? "held_out_outcomes" : "discrepancy"; }

CvLoss cv_loss_from_string(const std::string& s) {
  if (s == "held_out_outcomes") return CvLoss::HeldOutOutcomes;
  if (s == "discrepancy") return CvLoss::Discrepancy;
  throw Error(ErrorCode::InvalidConfig, "unknown CV loss '" + s + "'");
}

void CvPlan::validate() const {
  auto check = [](const std::vector<double>& g, const std::string& name) {
    if (g.empty()) throw Error(ErrorCode::InvalidConfig, name + " must not be empty");
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(g[i] > 0.0) || !std::isfinite(g[i])) throw Error(ErrorCode::InvalidConfig, name + " values must be positive");
      if (i && !(g[i] > g[i - 1])) throw Error(ErrorCode::InvalidConfig, name + " must be sorted ascending");
    }
  };
  check(h_mu_grid, "h_mu_grid");
  check(h_H_grid, "h_H_grid");
  check(a_grid, "a_grid");
  if (a_grid.back() >= 1.0) throw Error(ErrorCode::InvalidConfig, "a_grid values must be below 1");
  if (K_cv < 1) throw Error(ErrorCode::InvalidConfig, "K_cv must be positive");
  for (std::size_t i = 0; i < K_grid.size(); ++i) {
    if (K_grid[i] < 0) throw Error(ErrorCode::InvalidConfig, "K_grid values must be nonnegative");
    if (i && !(K_grid[i] > K_grid[i - 1])) throw Error(ErrorCode::InvalidConfig, "K_grid must be sorted ascending");
  }
  if (!(tie_tol >= 0.0)) throw Error(ErrorCode::InvalidConfig, "tie_tol must be nonnegative");
}

namespace {

using RowSelector = std::function<std::vector<std::size_t>(const SiteSample&)>;
using PairSelector = std::function<PairSelection(const SiteSample&)>;

const double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string label(const SiteSample& s, const std::string& what) { return "site '" + s.site_id + "', " + what; }

// Per-site pieces of one mean curve, from which the curve over any group
// minus one site can be rebuilt: averaged own fits (dense) or summed
// reweighted equations (sparse).
struct CurveBank {
  const Dataset* ds = nullptr;
  const Smoother* sm = nullptr;
  std::string what;
  std::vector<std::size_t> group;
  std::map<std::size_t, std::size_t> pos;
  std::vector<std::optional<Eigen::VectorXd>> own;
  std::vector<std::string> own_error;
  std::vector<std::vector<NormalEquations>> eqs;

  bool sparse() const { return ds->sampling == Sampling::Sparse; }

  const Eigen::VectorXd& own_curve(std::size_t site) const {
    const auto i = pos.at(site);
    if (!own[i]) throw Error(ErrorCode::InsufficientLocalData, own_error[i]);
    return *own[i];
  }

  Eigen::VectorXd mean_excluding(std::optional<std::size_t> skip) const {
    std::size_t used = 0;
    if (!sparse()) {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(sm->size());
      for (std::size_t i = 0; i < group.size(); ++i) {
        if (skip && group[i] == *skip) continue;
        if (!own[i]) throw Error(ErrorCode::InsufficientLocalData, own_error[i]);
        sum += *own[i];
        ++used;
      }
      if (!used) throw Error(ErrorCode::InsufficientLocalData, "no sites left for " + what);
      return sum / static_cast<double>(used);
    }
    std::vector<NormalEquations> total(static_cast<std::size_t>(sm->size()));
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (skip && group[i] == *skip) continue;
      for (std::size_t k = 0; k < total.size(); ++k) total[k].add(eqs[i][k]);
      ++used;
    }
    if (!used) throw Error(ErrorCode::InsufficientLocalData, "no sites left for " + what);
    return solve_curve(*sm, total, "pooled " + what, nullptr);
  }
};

CurveBank make_curve_bank(const Dataset& ds, const GridPtr& grid, const Smoother& sm,
                          const std::vector<std::size_t>& group, const RowSelector& select, const std::string& what,
                          bool need_own) {
  CurveBank b;
  b.ds = &ds;
  b.sm = &sm;
  b.what = what;
  b.group = group;
  for (std::size_t i = 0; i < group.size(); ++i) b.pos[group[i]] = i;
  b.own.resize(group.size());
  b.own_error.resize(group.size());
  if (b.sparse()) b.eqs.resize(group.size());
  parallel_for(group.size(), [&](std::size_t i) {
    const auto& site = ds.sites[group[i]];
    const auto rows = select(site);
    if (b.sparse()) {
      const double mult = rows.empty() ? 1.0 : 1.0 / static_cast<double>(rows.size());
      b.eqs[i] = sm.mean_equations(sm.rows(site, rows, sparse_ratio(ds, site, *grid), mult));
      if (!need_own) return;
    }
    try {
      b.own[i] = site_curve(sm, site, rows, label(site, what), nullptr);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientLocalData) throw;
      b.own_error[i] = e.what();
    }
  });
  return b;
}

// Second-moment surfaces, stored per site (dense) or as a pooled equation
// total from which one site's contribution is recomputed and removed
// (sparse).
struct SurfaceBank {
  const Dataset* ds = nullptr;
  GridPtr grid;
  const Smoother* sm = nullptr;
  PairSelector select;
  std::string what;
  std::vector<std::size_t> group;
  std::map<std::size_t, std::size_t> pos;
  std::vector<std::optional<Eigen::MatrixXd>> own;
  std::vector<std::string> own_error;
  std::vector<NormalEquations> total;
  bool same = false;

  bool sparse() const { return ds->sampling == Sampling::Sparse; }

  std::vector<NormalEquations> site_equations(std::size_t site) const {
    const auto m = sm->size();
    const auto& s = ds->sites[site];
    const auto pairs = select(s);
    std::vector<NormalEquations> eqs(static_cast<std::size_t>(m * m));
    const double lm = pairs.left.empty() ? 1.0 : 1.0 / static_cast<double>(pairs.left.size());
    const double rm = pairs.same ? lm : (pairs.right.empty() ? 1.0 : 1.0 / static_cast<double>(pairs.right.size()));
    for_each_pair_equation(*sm, s, pairs, sparse_ratio(*ds, s, *grid), lm, rm,
                           [&](Eigen::Index k, Eigen::Index l, const NormalEquations& ne) {
                             eqs[static_cast<std::size_t>(k * m + l)] = ne;
                           });
    return eqs;
  }

  Eigen::MatrixXd own_surface(std::size_t site) const {
    if (!sparse()) {
      const auto i = pos.at(site);
      if (!own[i]) throw Error(ErrorCode::InsufficientLocalData, own_error[i]);
      return *own[i];
    }
    const auto& s = ds->sites[site];
    return site_surface(*sm, s, select(s), label(s, what), nullptr);
  }

  Eigen::MatrixXd mean_excluding(std::optional<std::size_t> skip) const {
    const bool drop = skip && pos.count(*skip);
    if (!sparse()) {
      Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(sm->size(), sm->size());
      std::size_t used = 0;
      for (std::size_t i = 0; i < group.size(); ++i) {
        if (drop && group[i] == *skip) continue;
        if (!own[i]) throw Error(ErrorCode::InsufficientLocalData, own_error[i]);
        sum += *own[i];
        ++used;
      }
      if (!used) throw Error(ErrorCode::InsufficientLocalData, "no sites left for " + what);
      return sum / static_cast<double>(used);
    }
    if (drop && group.size() < 2) throw Error(ErrorCode::InsufficientLocalData, "no sites left for " + what);
    if (!drop) return solve_surface(*sm, total, same, "pooled " + what, nullptr);
    auto eqs = total;
    const auto mine = site_equations(*skip);
    for (std::size_t q = 0; q < eqs.size(); ++q) eqs[q].subtract(mine[q]);
    return solve_surface(*sm, eqs, same, "pooled " + what, nullptr);
  }
};

SurfaceBank make_surface_bank(const Dataset& ds, const GridPtr& grid, const Smoother& sm,
                              const std::vector<std::size_t>& group, const PairSelector& select,
                              const std::string& what) {
  SurfaceBank b;
  b.ds = &ds;
  b.grid = grid;
  b.sm = &sm;
  b.select = select;
  b.what = what;
  b.group = group;
  for (std::size_t i = 0; i < group.size(); ++i) b.pos[group[i]] = i;
  if (!group.empty()) b.same = select(ds.sites[group[0]]).same;
  if (!b.sparse()) {
    b.own.resize(group.size());
    b.own_error.resize(group.size());
    parallel_for(group.size(), [&](std::size_t i) {
      const auto& site = ds.sites[group[i]];
      try {
        b.own[i] = site_surface(sm, site, select(site), label(site, what), nullptr);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InsufficientLocalData) throw;
        b.own_error[i] = e.what();
      }
    });
    return b;
  }
  const auto m = sm.size();
  b.total.resize(static_cast<std::size_t>(m * m));
  const std::size_t chunk = static_cast<std::size_t>(std::max(1, num_threads()));
  for (std::size_t start = 0; start < group.size(); start += chunk) {
    const std::size_t count = std::min(chunk, group.size() - start);
    std::vector<std::vector<NormalEquations>> eqs(count);
    parallel_for(count, [&](std::size_t i) { eqs[i] = b.site_equations(group[start + i]); });
    for (const auto& e : eqs)
      for (std::size_t q = 0; q < e.size(); ++q)
        if (e[q].p) b.total[q].add(e[q]);
  }
  return b;
}

std::vector<std::size_t> clusters_with(const Dataset& ds, int treated) {
  std::vector<std::size_t> out;
  for (auto g : ds.experimental_indices())
    if (ds.sites[g].cluster_treatment.value_or(0) == treated) out.push_back(g);
  return out;
}

struct MeanCell {
  RowSelector rows;
  std::vector<std::size_t> group;
  std::string what;
};

struct PairCell {
  PairSelector pairs;
  std::vector<std::size_t> group;
  std::string what;
};

std::vector<MeanCell> mean_cells(const Dataset& ds) {
  const auto exp = ds.experimental_indices();
  if (ds.design == Design::WithinCluster)
    return {{[](const SiteSample& s) { return rows_with_treatment(s, 0); }, exp, "D=0"},
            {[](const SiteSample& s) { return rows_with_treatment(s, 1); }, exp, "D=1"}};
  auto follow = [](const SiteSample& s) { return rows_in_period(s, 1); };
  return {{[](const SiteSample& s) { return rows_in_period(s, 0); }, exp, "baseline"},
          {follow, clusters_with(ds, 1), "treated follow-up"},
          {follow, clusters_with(ds, 0), "control follow-up"}};
}

std::vector<PairCell> pair_cells(const Dataset& ds) {
  const auto exp = ds.experimental_indices();
  auto within = [](int d1, int d2) { return [d1, d2](const SiteSample& s) { return within_pairs(s, d1, d2); }; };
  if (ds.design == Design::WithinCluster)
    return {{within(0, 0), exp, "pairs (0,0)"}, {within(0, 1), exp, "pairs (0,1)"}, {within(1, 1), exp, "pairs (1,1)"}};
  auto cross = [](const SiteSample& s) { return cluster_pairs(s, false); };
  return {{[](const SiteSample& s) { return cluster_pairs(s, true); }, exp, "baseline pairs"},
          {cross, clusters_with(ds, 1), "treated cross-period pairs"},
          {cross, clusters_with(ds, 0), "control cross-period pairs"}};
}

void require_sites(const Dataset& ds, std::size_t min_exp) {
  validate(ds);
  if (ds.experimental_indices().size() < min_exp)
    throw Error(ErrorCode::InvalidArgument,
                "cross-validation needs at least " + std::to_string(min_exp) + " experimental sites");
}

KernelSpec candidate_spec(const Dataset& ds, KernelFamily family, double h) {
  KernelSpec spec;
  spec.family = family;
  spec.h = h;
  return standardized(spec, ds);
}

// Loss and the loss of the zero prediction for one fold.
struct FoldLoss {
  double loss = 0.0;
  double reference = 0.0;
};

// Combine per-fold results for one candidate.
CvCandidate reduce(double value, int K, const std::vector<std::optional<FoldLoss>>& folds,
                   const std::vector<std::string>& errors, double* reference) {
  CvCandidate c;
  c.value = value;
  c.K = K;
  double sum = 0.0, ref = 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < folds.size(); ++i) {
    if (!folds[i]) {
      ++c.failed_folds;
      if (c.failure.empty()) c.failure = errors[i];
      continue;
    }
    sum += folds[i]->loss;
    ref += folds[i]->reference;
    ++ok;
  }
  c.loss = ok ? sum / static_cast<double>(ok) : kNaN;
  if (reference && ok) *reference = std::max(*reference, ref / static_cast<double>(ok));
  return c;
}

// prefer_last: ties go to the last candidate in table order.
CvSelection select(std::vector<CvCandidate> table, std::size_t folds, double reference, double tie_tol,
                   bool prefer_last, const std::string& what) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : table)
    if (std::isfinite(c.loss)) best = std::min(best, c.loss);
  if (!std::isfinite(best)) {
    std::string why = table.empty() ? std::string("no candidates") : table.front().failure;
    throw Error(ErrorCode::AllCandidatesFailed, "every " + what + " candidate failed: " + why);
  }
  const double limit = best + tie_tol * (std::abs(best) + reference);
  CvSelection s;
  s.folds = folds;
  std::optional<std::size_t> pick;
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (!(std::isfinite(table[i].loss) && table[i].loss <= limit)) continue;
    if (!pick || prefer_last) pick = i;
  }
  s.chosen = table[*pick].value;
  s.chosen_K = table[*pick].K;
  s.table = std::move(table);
  return s;
}

// Squared error of y_i against f at x_i over rows inside the grid box.
void add_outcome_loss(const SiteSample& site, const std::vector<std::size_t>& rows, const DiscretizedFunction& f,
                      double& sum, double& ref, double& n) {
  for (auto r : rows) {
    const auto& rec = site.records[r];
    bool outside = false;
    const double v = interpolate(f, rec.x, &outside);
    if (outside) continue;
    sum += (rec.y - v) * (rec.y - v);
    ref += rec.y * rec.y;
    n += 1.0;
  }
}

// Squared error of y_i y_j against M(x_i, x_j) over the selected pairs with
// both units inside the grid box.
void add_pair_loss(const SiteSample& site, const PairSelection& pairs, const GridPtr& grid, const Eigen::MatrixXd& M,
                   double& sum, double& ref, double& n) {
  struct Unit {
    InterpolationStencil st;
    double y;
    const std::optional<std::string>* id;
  };
  auto load = [&](const std::vector<std::size_t>& rows) {
    std::vector<Unit> out;
    for (auto r : rows) {
      const auto& rec = site.records[r];
      auto st = interpolation_stencil(*grid, rec.x);
      if (st.outside_bounds) continue;
      out.push_back({std::move(st), rec.y, &rec.unit_id});
    }
    return out;
  };
  const auto left = load(pairs.left);
  const auto right = pairs.same ? std::vector<Unit>{} : load(pairs.right);
  const auto& rhs = pairs.same ? left : right;
  Eigen::VectorXd row(M.cols());
  for (std::size_t i = 0; i < left.size(); ++i) {
    row.setZero();
    for (std::size_t q = 0; q < left[i].st.index.size(); ++q) row += left[i].st.weight[q] * M.row(left[i].st.index[q]).transpose();
    for (std::size_t j = pairs.same ? i + 1 : 0; j < rhs.size(); ++j) {
      if (pairs.exclude_same_unit && left[i].id->has_value() && *left[i].id == *rhs[j].id) continue;
      double v = 0.0;
      for (std::size_t q = 0; q < rhs[j].st.index.size(); ++q) v += rhs[j].st.weight[q] * row[rhs[j].st.index[q]];
      const double yy = left[i].y * rhs[j].y;
      sum += (yy - v) * (yy - v);
      ref += yy * yy;
      n += 1.0;
    }
  }
}

double weighted_sq(const Eigen::VectorXd& v, const QuadratureGrid& g) {
  return (v.array().square() * g.weights.array()).sum();
}

double weighted_sq_surface(const Eigen::MatrixXd& m, const QuadratureGrid& g) {
  return (g.weights.asDiagonal() * m.array().square().matrix() * g.weights.asDiagonal()).sum();
}

template <class PerFold>
void run_folds(const std::vector<std::size_t>& folds, std::vector<std::optional<FoldLoss>>& out,
               std::vector<std::string>& errors, const PerFold& per_fold) {
  out.assign(folds.size(), std::nullopt);
  errors.assign(folds.size(), {});
  parallel_for(folds.size(), [&](std::size_t i) {
    try {
      out[i] = per_fold(folds[i]);
    } catch (const Error& e) {
      if (e.category() == ErrorCategory::Validation) throw;
      errors[i] = e.what();
    }
  });
}

}  // namespace

CvSelection cv_bandwidth_mean(const Dataset& ds, const GridPtr& grid, const CvPlan& plan) {
  plan.validate();
  require_sites(ds, 3);
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const auto folds = ds.experimental_indices();
  const auto cells = mean_cells(ds);
  const bool discrepancy = plan.loss == CvLoss::Discrepancy;
  std::vector<CvCandidate> table;
  double reference = 0.0;
  for (double h : plan.h_mu_grid) {
    const Smoother sm(grid->points, candidate_spec(ds, plan.family, h));
    std::vector<CurveBank> banks;
    for (const auto& c : cells) banks.push_back(make_curve_bank(ds, grid, sm, c.group, c.rows, c.what, discrepancy));
    std::vector<std::optional<FoldLoss>> res;
    std::vector<std::string> errors;
    run_folds(folds, res, errors, [&](std::size_t g) {
      const auto& site = ds.sites[g];
      double loss = 0.0, ref = 0.0;
      int terms = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& bank = banks[c];
        if (!bank.pos.count(g) || bank.group.size() < 2) continue;
        const DiscretizedFunction rest(grid, bank.mean_excluding(g));
        if (discrepancy) {
          loss += weighted_sq(bank.own_curve(g) - rest.values, *grid);
          ref += weighted_sq(bank.own_curve(g), *grid);
          ++terms;
          continue;
        }
        double s = 0.0, r = 0.0, n = 0.0;
        add_outcome_loss(site, cells[c].rows(site), rest, s, r, n);
        if (n == 0.0) continue;
        loss += s / n;
        ref += r / n;
        ++terms;
      }
      if (!terms) throw Error(ErrorCode::InsufficientLocalData, label(site, "no held-out units inside the grid box"));
      return FoldLoss{loss / terms, ref / terms};
    });
    table.push_back(reduce(h, 0, res, errors, &reference));
  }
  return select(std::move(table), folds.size(), reference, plan.tie_tol, false, "h_mu");
}

CvSelection cv_bandwidth_cov(const Dataset& ds, const GridPtr& grid, const CvPlan& plan) {
  plan.validate();
  require_sites(ds, 3);
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const auto folds = ds.experimental_indices();
  const auto cells = pair_cells(ds);
  const bool discrepancy = plan.loss == CvLoss::Discrepancy;
  std::vector<CvCandidate> table;
  double reference = 0.0;
  for (double h : plan.h_H_grid) {
    const Smoother sm(grid->points, candidate_spec(ds, plan.family, h));
    std::vector<SurfaceBank> banks;
    for (const auto& c : cells) banks.push_back(make_surface_bank(ds, grid, sm, c.group, c.pairs, c.what));
    std::vector<std::optional<FoldLoss>> res;
    std::vector<std::string> errors;
    run_folds(folds, res, errors, [&](std::size_t g) {
      const auto& site = ds.sites[g];
      double loss = 0.0, ref = 0.0;
      int terms = 0;
      for (std::size_t c = 0; c < cells.size(); ++c) {
        const auto& bank = banks[c];
        if (!bank.pos.count(g) || bank.group.size() < 2) continue;
        const Eigen::MatrixXd rest = bank.mean_excluding(g);
        if (discrepancy) {
          const Eigen::MatrixXd own = bank.own_surface(g);
          loss += weighted_sq_surface(own - rest, *grid);
          ref += weighted_sq_surface(own, *grid);
          ++terms;
          continue;
        }
        double s = 0.0, r = 0.0, n = 0.0;
        add_pair_loss(site, cells[c].pairs(site), grid, rest, s, r, n);
        if (n == 0.0) continue;
        loss += s / n;
        ref += r / n;
        ++terms;
      }
      if (!terms) throw Error(ErrorCode::NoPairs, label(site, "no held-out pairs inside the grid box"));
      return FoldLoss{loss / terms, ref / terms};
    });
    table.push_back(reduce(h, 0, res, errors, &reference));
  }
  return select(std::move(table), folds.size(), reference, plan.tie_tol, false, "h_H");
}

namespace {

// Operators and reference curves for one held-out site.
struct FoldInputs {
  DiscretizedFunction mu0, tau, own_mu0, own_tau;
  OperatorMatrix H_mumu, H_mutau;
};

Eigen::MatrixXd sym(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

}  // namespace

CvSelection cv_regularization(const Dataset& ds, const GridPtr& grid, const CvPlan& plan, const KernelSpec& spec_mu,
                              const KernelSpec& spec_H, const BasisOptions& opt) {
  plan.validate();
  require_sites(ds, 4);
  if (grid->d != ds.d) throw Error(ErrorCode::GridMismatch, "grid dimension differs from dataset");
  const Smoother sm_mu(grid->points, standardized(spec_mu, ds));
  const Smoother sm_H(grid->points, standardized(spec_H, ds));
  const auto exp = ds.experimental_indices();
  const std::vector<int> Ks = plan.K_grid.empty() ? std::vector<int>{plan.K_cv} : plan.K_grid;
  const int K_max = std::min<int>(*std::max_element(Ks.begin(), Ks.end()), static_cast<int>(grid->size()));
  auto wrap = [&](const Eigen::VectorXd& v) { return DiscretizedFunction(grid, v); };

  std::vector<std::size_t> folds;
  std::function<FoldInputs(std::size_t)> inputs;
  // Banks must outlive the fold closures.
  std::vector<CurveBank> cb;
  std::vector<SurfaceBank> sb;

  if (ds.design == Design::WithinCluster) {
    folds = exp;
    auto arm = [](int d) { return [d](const SiteSample& s) { return rows_with_treatment(s, d); }; };
    auto pairs = [](int d1, int d2) { return [d1, d2](const SiteSample& s) { return within_pairs(s, d1, d2); }; };
    cb.push_back(make_curve_bank(ds, grid, sm_mu, exp, arm(0), "D=0", true));
    cb.push_back(make_curve_bank(ds, grid, sm_mu, exp, arm(1), "D=1", true));
    cb.push_back(make_curve_bank(ds, grid, sm_H, exp, arm(0), "D=0", false));
    cb.push_back(make_curve_bank(ds, grid, sm_H, exp, arm(1), "D=1", false));
    sb.push_back(make_surface_bank(ds, grid, sm_H, exp, pairs(0, 0), "pairs (0,0)"));
    sb.push_back(make_surface_bank(ds, grid, sm_H, exp, pairs(0, 1), "pairs (0,1)"));
    inputs = [&](std::size_t g) {
      FoldInputs in;
      in.mu0 = wrap(cb[0].mean_excluding(g));
      in.tau = wrap(cb[1].mean_excluding(g) - in.mu0.values);
      const Eigen::VectorXd e0 = cb[2].mean_excluding(g), e1 = cb[3].mean_excluding(g);
      const Eigen::MatrixXd h00 = sb[0].mean_excluding(g) - e0 * e0.transpose();
      const Eigen::MatrixXd h01 = sb[1].mean_excluding(g) - e0 * e1.transpose();
      in.H_mumu = psd_project(OperatorMatrix(grid, sym(h00))).op;
      in.H_mutau = OperatorMatrix(grid, h01 - h00);
      in.own_mu0 = wrap(cb[0].own_curve(g));
      in.own_tau = wrap(cb[1].own_curve(g) - cb[0].own_curve(g));
      return in;
    };
  } else {
    const auto treated = clusters_with(ds, 1), control = clusters_with(ds, 0);
    if (treated.size() < 2) throw Error(ErrorCode::NoTreatedClusters, "cross-validating a needs two treated clusters");
    if (control.empty()) throw Error(ErrorCode::NoControlClusters, "no control clusters");
    folds = treated;
    auto base = [](const SiteSample& s) { return rows_in_period(s, 0); };
    auto follow = [](const SiteSample& s) { return rows_in_period(s, 1); };
    auto bb = [](const SiteSample& s) { return cluster_pairs(s, true); };
    auto bf = [](const SiteSample& s) { return cluster_pairs(s, false); };
    cb.push_back(make_curve_bank(ds, grid, sm_mu, exp, base, "baseline", true));              // 0
    cb.push_back(make_curve_bank(ds, grid, sm_mu, treated, follow, "follow-up", true));       // 1
    cb.push_back(make_curve_bank(ds, grid, sm_mu, control, follow, "follow-up", false));      // 2
    cb.push_back(make_curve_bank(ds, grid, sm_mu, control, base, "baseline", false));         // 3
    cb.push_back(make_curve_bank(ds, grid, sm_H, exp, base, "baseline", false));              // 4
    cb.push_back(make_curve_bank(ds, grid, sm_H, treated, base, "baseline", false));          // 5
    cb.push_back(make_curve_bank(ds, grid, sm_H, treated, follow, "follow-up", false));       // 6
    cb.push_back(make_curve_bank(ds, grid, sm_H, control, base, "baseline", false));          // 7
    cb.push_back(make_curve_bank(ds, grid, sm_H, control, follow, "follow-up", false));       // 8
    sb.push_back(make_surface_bank(ds, grid, sm_H, exp, bb, "baseline pairs"));
    sb.push_back(make_surface_bank(ds, grid, sm_H, treated, bf, "treated cross-period pairs"));
    sb.push_back(make_surface_bank(ds, grid, sm_H, control, bf, "control cross-period pairs"));
    inputs = [&](std::size_t g) {
      FoldInputs in;
      in.mu0 = wrap(cb[0].mean_excluding(g));
      const Eigen::VectorXd control_follow = cb[2].mean_excluding(std::nullopt);
      in.tau = wrap(cb[1].mean_excluding(g) - control_follow);
      const Eigen::VectorXd b = cb[4].mean_excluding(g);
      const Eigen::MatrixXd hmm = sb[0].mean_excluding(g) - b * b.transpose();
      const Eigen::VectorXd bt = cb[5].mean_excluding(g), ft = cb[6].mean_excluding(g);
      const Eigen::VectorXd bc = cb[7].mean_excluding(std::nullopt), fc = cb[8].mean_excluding(std::nullopt);
      const Eigen::MatrixXd ht = sb[1].mean_excluding(g) - bt * ft.transpose();
      const Eigen::MatrixXd hc = sb[2].mean_excluding(std::nullopt) - bc * fc.transpose();
      in.H_mumu = psd_project(OperatorMatrix(grid, sym(hmm))).op;
      in.H_mutau = OperatorMatrix(grid, ht - hc);
      in.own_mu0 = wrap(cb[0].own_curve(g));
      const Eigen::VectorXd control_change = control_follow - cb[3].mean_excluding(std::nullopt);
      in.own_tau = wrap(cb[1].own_curve(g) - cb[0].own_curve(g) - control_change);
      return in;
    };
  }

  const std::size_t n_cand = plan.a_grid.size() * Ks.size();
  std::vector<std::vector<std::optional<FoldLoss>>> res(n_cand, std::vector<std::optional<FoldLoss>>(folds.size()));
  std::vector<std::vector<std::string>> errors(n_cand, std::vector<std::string>(folds.size()));
  parallel_for(folds.size(), [&](std::size_t f) {
    std::optional<FoldInputs> in;
    try {
      in = inputs(folds[f]);
    } catch (const Error& e) {
      if (e.category() == ErrorCategory::Validation) throw;
      for (std::size_t c = 0; c < n_cand; ++c) errors[c][f] = e.what();
      return;
    }
    const double ref = weighted_sq(in->own_tau.values, *grid);
    for (std::size_t ai = 0; ai < plan.a_grid.size(); ++ai) {
      try {
        const auto basis = solve_optimal_basis(in->H_mumu, in->H_mutau, plan.a_grid[ai], K_max, opt);
        const auto scores = compute_scores(in->own_mu0, in->mu0, basis);
        for (std::size_t ki = 0; ki < Ks.size(); ++ki) {
          const auto pred = predict_cate(scores, in->tau, basis, std::min(Ks[ki], basis.K));
          res[ai * Ks.size() + ki][f] = FoldLoss{weighted_sq(pred.tau_hat.values - in->own_tau.values, *grid), ref};
        }
      } catch (const Error& e) {
        if (e.category() == ErrorCategory::Validation) throw;
        for (std::size_t ki = 0; ki < Ks.size(); ++ki) errors[ai * Ks.size() + ki][f] = e.what();
      }
    }
  });

  std::vector<CvCandidate> table;
  double reference = 0.0;
  // Table order: K descending within a ascending, so "last tied" means the
  // largest a and then the smallest K.
  for (std::size_t ai = 0; ai < plan.a_grid.size(); ++ai)
    for (std::size_t kr = Ks.size(); kr-- > 0;)
      table.push_back(reduce(plan.a_grid[ai], Ks[kr], res[ai * Ks.size() + kr], errors[ai * Ks.size() + kr], &reference));
  return select(std::move(table), folds.size(), reference, plan.tie_tol, true, "a");
}

double rate_rule_h(const Dataset& ds) {
  const auto exp = ds.experimental_indices();
  double n = 0.0;
  for (auto g : exp) {
    const auto& s = ds.sites[g];
    n += static_cast<double>(ds.design == Design::ClusterLevel ? rows_in_period(s, 0).size() : s.records.size());
  }
  n /= static_cast<double>(exp.size());
  return std::pow(std::log(n) / (static_cast<double>(exp.size()) * n), 1.0 / (4.0 + ds.d));
}

CvReport run_cv(const Dataset& ds, const GridPtr& grid, const CvPlan& plan, const BasisOptions& opt) {
  plan.validate();
  CvReport r;
  r.h_mu = cv_bandwidth_mean(ds, grid, plan);
  r.h_H = cv_bandwidth_cov(ds, grid, plan);
  KernelSpec mu, H;
  mu.family = H.family = plan.family;
  mu.h = r.h_mu.chosen;
  H.h = r.h_H.chosen;
  r.a = cv_regularization(ds, grid, plan, mu, H, opt);
  r.folds = r.h_mu.folds;
  r.rate_rule_h = rate_rule_h(ds);
  return r;
}

}  // namespace cate
