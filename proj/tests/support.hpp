#pragma once

#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cate/dataset.hpp"
#include "cate/error.hpp"
#include "cate/grid.hpp"
#include "cate/simulator.hpp"

namespace testing {

using namespace cate;

inline GridPtr unit_grid(int d = 1, int ppd = 16) {
  Bounds b(d, {0.0, 1.0});
  return make_grid(d, b, ppd, uniform_density(std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)));
}

inline UnitRecord unit(const std::string& site, std::vector<double> x, int d, double y) {
  UnitRecord r;
  r.site_id = site;
  r.x = std::move(x);
  r.d_treat = d;
  r.y = y;
  return r;
}

//! Site whose outcome is fn(x, d) on the given covariate rows, alternating
//! treatment unless `target`.
inline SiteSample make_site(const std::string& id, const std::vector<std::vector<double>>& xs,
                            const std::function<double(const std::vector<double>&, int)>& fn, bool target = false) {
  SiteSample s;
  s.site_id = id;
  s.role = target ? Role::Target : Role::Experimental;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const int d = target ? 0 : static_cast<int>(i % 2);
    s.records.push_back(unit(id, xs[i], d, fn(xs[i], d)));
  }
  return s;
}

inline std::vector<std::vector<double>> line_points(int n, double lo, double hi) {
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < n; ++i) xs.push_back({lo + (hi - lo) * (i + 0.5) / n});
  return xs;
}

inline std::vector<std::vector<double>> square_points(int n, double lo, double hi) {
  std::vector<std::vector<double>> xs;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) xs.push_back({lo + (hi - lo) * (i + 0.5) / n, lo + (hi - lo) * (j + 0.37) / n});
  return xs;
}

inline Dataset make_dataset(std::vector<SiteSample> sites, int d) {
  Dataset ds;
  ds.sites = std::move(sites);
  ds.d = d;
  return ds;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("cate_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

//! Population on [0,1] with components given by orthonormal shifted
//! Legendre polynomials: f_l = P_{f_orders[l]}, h_l = P_{h_orders[l]}.
inline PopulationConfig legendre_population(int G, const std::vector<int>& f_orders, const std::vector<int>& h_orders,
                                            const std::vector<double>& m_sd) {
  PopulationConfig c;
  c.G = G;
  c.d = 1;
  c.mu0 = AnalyticFunction::legendre(0, 1, 0.0, 1.0, 0.5);
  c.mu0.terms.push_back({1.0, {}});
  c.tau = AnalyticFunction::constant(0.5);
  for (int o : f_orders) c.f.push_back(AnalyticFunction::legendre(0, o));
  for (int o : h_orders) c.h.push_back(AnalyticFunction::legendre(0, o));
  c.m_sd = m_sd;
  c.covariates.lower = {0.0};
  c.covariates.upper = {1.0};
  return c;
}

template <class F>
ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a cate::Error");
}

}  // namespace testing
