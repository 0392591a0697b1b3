#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cate/density.hpp"

namespace cate {

enum class Role { Experimental, Target };
enum class Design { WithinCluster, ClusterLevel };
enum class Sampling { Dense, Sparse };

const char* to_string(Role role);
const char* to_string(Design design);
const char* to_string(Sampling sampling);
Design design_from_string(const std::string& s);
Sampling sampling_from_string(const std::string& s);

struct UnitRecord {
  std::string site_id;
  std::vector<double> x;
  int d_treat = 0;
  double y = 0.0;
  std::optional<int> period;
  std::optional<std::string> unit_id;

  bool operator==(const UnitRecord&) const = default;
};

struct SiteSample {
  std::string site_id;
  std::vector<UnitRecord> records;
  Role role = Role::Experimental;
  std::optional<int> cluster_treatment;
  std::optional<DensitySpec> covariate_density;

  bool operator==(const SiteSample&) const = default;
};

struct Dataset {
  std::vector<SiteSample> sites;
  int d = 0;
  Design design = Design::WithinCluster;
  Sampling sampling = Sampling::Dense;

  std::size_t num_sites() const { return sites.size(); }
  std::size_t target_index() const;
  std::vector<std::size_t> experimental_indices() const;

  bool operator==(const Dataset&) const = default;
};

//! Throws the corresponding data error if any dataset invariant fails.
void validate(const Dataset& ds);

struct CsvSchema {
  std::string site = "site";
  std::string treatment = "D";
  std::string outcome = "Y";
  //! Empty means: detect X1..Xd from the header.
  std::vector<std::string> covariates;
  //! Column holding "target"/"experimental" (or 1/0). Ignored when target_site is set.
  std::string role = "role";
  std::optional<std::string> target_site;
  //! Defaults to "unit" when such a column exists.
  std::optional<std::string> unit;
  //! Defaults to "period" for the cluster-level design.
  std::optional<std::string> period;
  Design design = Design::WithinCluster;
  Sampling sampling = Sampling::Dense;
  //! Parametric family fitted per site for the sparse variant.
  DensityFamily sparse_density = DensityFamily::Gaussian;
};

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema = {});
Dataset parse_csv(const std::string& text, const CsvSchema& schema = {});

//! Writes a CSV that ingest_csv reads back to an identical Dataset (given a
//! schema with the same design and sampling).
void write_csv(const Dataset& ds, const std::filesystem::path& path);
std::string format_csv(const Dataset& ds);

struct SiteSummary {
  std::string site_id;
  Role role = Role::Experimental;
  std::size_t n = 0;
  std::size_t n_treated = 0;
  std::optional<int> cluster_treatment;

  bool operator==(const SiteSummary&) const = default;
};

struct DatasetSummary {
  int d = 0;
  Design design = Design::WithinCluster;
  Sampling sampling = Sampling::Dense;
  std::vector<SiteSummary> sites;
  std::vector<double> covariate_mean;
  std::vector<double> covariate_sd;
  double outcome_mean = 0.0;

  bool operator==(const DatasetSummary&) const = default;
};

DatasetSummary summarize(const Dataset& ds);

//! Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace cate
