#include "cate/transfer.hpp"

#include <cmath>
#include <unordered_map>

#include "cate/error.hpp"

namespace cate {

ScoreVector compute_scores(const DiscretizedFunction& mu_g, const DiscretizedFunction& mu_mean, const BasisSet& basis,
                           bool apply_factor, const std::string& site_id) {
  require_same_grid(mu_g.grid, mu_mean.grid);
  require_same_grid(mu_g.grid, basis.grid);
  double c = 1.0;
  if (apply_factor && basis.a != 0.0) {
    if (!(basis.a < 1.0)) throw Error(ErrorCode::InvalidArgument, "score factor (1+a)/(1-a) needs a < 1");
    c = (1.0 + basis.a) / (1.0 - basis.a);
  }
  const DiscretizedFunction centred(mu_g.grid, mu_g.values - mu_mean.values);
  ScoreVector out;
  out.site_id = site_id;
  for (int k = 0; k < basis.K; ++k) out.t.push_back(c * inner_product(centred, basis.phi[k]));
  return out;
}

CatePrediction predict_cate(const ScoreVector& scores, const DiscretizedFunction& tau_mean, const BasisSet& basis,
                            int K_use) {
  require_same_grid(tau_mean.grid, basis.grid);
  if (K_use < 0 || K_use > basis.K || K_use > static_cast<int>(scores.t.size()))
    throw Error(ErrorCode::InvalidArgument, "K_use must lie in [0, K]");
  Eigen::VectorXd v = tau_mean.values;
  for (int k = 0; k < K_use; ++k) v += scores.t[k] * basis.psi[k].values;
  CatePrediction p;
  p.site_id = scores.site_id;
  p.grid = basis.grid;
  p.tau_hat = DiscretizedFunction(basis.grid, std::move(v));
  p.tau_mean = tau_mean;
  p.K_used = K_use;
  p.a = basis.a;
  return p;
}

SiteAverage site_average_effect(const CatePrediction& pred, const std::vector<std::vector<double>>& target_units) {
  if (target_units.empty()) throw Error(ErrorCode::EmptyUnitList, "no target units");
  const DiscretizedFunction centred(pred.grid, pred.tau_hat.values - pred.tau_mean.values);
  SiteAverage out;
  double sum = 0.0;
  for (std::size_t i = 0; i < target_units.size(); ++i) {
    bool outside = false;
    sum += interpolate(centred, target_units[i], &outside);
    if (outside) out.out_of_range.push_back(i);
  }
  out.value = sum / static_cast<double>(target_units.size());
  return out;
}

std::vector<StudyMean> study_aggregate(const std::vector<std::pair<std::string, double>>& preds,
                                       const std::map<std::string, std::string>& grouping) {
  std::vector<StudyMean> out;
  std::unordered_map<std::string, std::size_t> pos;
  for (const auto& [site, value] : preds) {
    auto it = grouping.find(site);
    if (it == grouping.end()) throw Error(ErrorCode::UnmappedSite, "site '" + site + "' has no study label");
    auto [p, inserted] = pos.emplace(it->second, out.size());
    if (inserted) out.push_back({it->second, 0.0, 0});
    out[p->second].mean += value;
    out[p->second].sites += 1;
  }
  for (auto& s : out) s.mean /= static_cast<double>(s.sites);
  return out;
}

double evaluate_holdout_correlation(const std::vector<double>& predicted, const std::vector<double>& realized) {
  if (predicted.size() != realized.size()) throw Error(ErrorCode::InvalidArgument, "vectors differ in length");
  if (predicted.size() < 3) throw Error(ErrorCode::InvalidArgument, "correlation needs at least three sites");
  const auto n = static_cast<Eigen::Index>(predicted.size());
  const Eigen::Map<const Eigen::VectorXd> p(predicted.data(), n), r(realized.data(), n);
  const Eigen::VectorXd pc = p.array() - p.mean(), rc = r.array() - r.mean();
  const double sp = pc.squaredNorm(), sr = rc.squaredNorm();
  if (!(sp > 0.0) || !(sr > 0.0)) throw Error(ErrorCode::DegenerateVariance, "a vector has zero variance");
  return pc.dot(rc) / std::sqrt(sp * sr);
}

}  // namespace cate
