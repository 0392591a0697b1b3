#pragma once

#include <map>
#include <string>
#include <vector>

#include "cate/basis.hpp"
#include "cate/grid.hpp"

namespace cate {

struct ScoreVector {
  std::string site_id;
  std::vector<double> t;
};

struct CatePrediction {
  std::string site_id;
  GridPtr grid;
  DiscretizedFunction tau_hat;
  DiscretizedFunction tau_mean;
  int K_used = 0;
  double a = 0.0;
};

//! t_k = c * <mu_g - mu_mean, phi_k> with c = (1+a)/(1-a) when
//! apply_factor, else 1.
ScoreVector compute_scores(const DiscretizedFunction& mu_g, const DiscretizedFunction& mu_mean, const BasisSet& basis,
                           bool apply_factor = true, const std::string& site_id = {});

CatePrediction predict_cate(const ScoreVector& scores, const DiscretizedFunction& tau_mean, const BasisSet& basis,
                            int K_use);

struct SiteAverage {
  double value = 0.0;
  //! Indices of units outside the grid box, evaluated at the clamped point.
  std::vector<std::size_t> out_of_range;
};

//! Mean over units of the centred prediction tau_hat - tau_mean.
SiteAverage site_average_effect(const CatePrediction& pred, const std::vector<std::vector<double>>& target_units);

struct StudyMean {
  std::string study;
  double mean = 0.0;
  std::size_t sites = 0;
};

//! Unweighted mean of site values within each study, in order of first
//! appearance in `preds`.
std::vector<StudyMean> study_aggregate(const std::vector<std::pair<std::string, double>>& preds,
                                       const std::map<std::string, std::string>& grouping);

double evaluate_holdout_correlation(const std::vector<double>& predicted, const std::vector<double>& realized);

}  // namespace cate
