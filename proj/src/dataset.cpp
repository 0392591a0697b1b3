#include "cate/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "cate/error.hpp"

namespace cate {

const char* to_string(Role role) { return role == Role::Target ? "target" : "experimental"; }
const char* to_string(Design design) {
  return design == Design::ClusterLevel ? "cluster_level" : "within_cluster";
}
const char* to_string(Sampling sampling) { return sampling == Sampling::Sparse ? "sparse" : "dense"; }

Design design_from_string(const std::string& s) {
  if (s == "within_cluster" || s == "within") return Design::WithinCluster;
  if (s == "cluster_level" || s == "cluster") return Design::ClusterLevel;
  throw Error(ErrorCode::InvalidConfig, "unknown design '" + s + "'");
}

Sampling sampling_from_string(const std::string& s) {
  if (s == "dense") return Sampling::Dense;
  if (s == "sparse") return Sampling::Sparse;
  throw Error(ErrorCode::InvalidConfig, "unknown sampling '" + s + "'");
}

std::size_t Dataset::target_index() const {
  for (std::size_t g = 0; g < sites.size(); ++g)
    if (sites[g].role == Role::Target) return g;
  throw Error(ErrorCode::NoTargetSite, "dataset has no target site");
}

std::vector<std::size_t> Dataset::experimental_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t g = 0; g < sites.size(); ++g)
    if (sites[g].role == Role::Experimental) out.push_back(g);
  return out;
}

void validate(const Dataset& ds) {
  if (ds.d < 1) throw Error(ErrorCode::InvalidArgument, "covariate dimension must be at least 1");
  std::size_t targets = 0;
  for (const auto& s : ds.sites) targets += s.role == Role::Target;
  if (targets == 0) throw Error(ErrorCode::NoTargetSite, "dataset has no target site");
  if (targets > 1) throw Error(ErrorCode::MultipleTargetSites, std::to_string(targets) + " target sites");
  if (ds.sites.size() < 3)
    throw Error(ErrorCode::InconsistentSite, "need at least 3 sites, got " + std::to_string(ds.sites.size()));

  std::set<std::string> ids;
  for (const auto& s : ds.sites) {
    if (!ids.insert(s.site_id).second) throw Error(ErrorCode::InconsistentSite, "site '" + s.site_id + "' listed twice");
    if (s.records.empty()) throw Error(ErrorCode::InconsistentSite, "site '" + s.site_id + "' has no units");
    const bool cluster = ds.design == Design::ClusterLevel;
    if (cluster != s.cluster_treatment.has_value())
      throw Error(ErrorCode::InconsistentSite, "cluster treatment must be set exactly for cluster-level designs");
    if (ds.sampling == Sampling::Sparse && !s.covariate_density)
      throw Error(ErrorCode::InconsistentSite, "sparse sampling needs a covariate density for site '" + s.site_id + "'");
    for (const auto& r : s.records) {
      if (r.site_id != s.site_id) throw Error(ErrorCode::InconsistentSite, "record filed under the wrong site");
      if (static_cast<int>(r.x.size()) != ds.d)
        throw Error(ErrorCode::InconsistentSite, "record in site '" + s.site_id + "' has wrong covariate count");
      if (r.d_treat != 0 && r.d_treat != 1) throw Error(ErrorCode::InconsistentSite, "treatment must be 0 or 1");
      if (!std::isfinite(r.y)) throw Error(ErrorCode::NonNumericValue, "non-finite outcome in site '" + s.site_id + "'");
      for (double v : r.x)
        if (!std::isfinite(v)) throw Error(ErrorCode::NonNumericValue, "non-finite covariate in site '" + s.site_id + "'");
      if (cluster && !r.period) throw Error(ErrorCode::MissingColumn, "cluster-level design needs a period for every row");
      if (r.period && *r.period != 0 && *r.period != 1) throw Error(ErrorCode::InconsistentSite, "period must be 0 or 1");
      if (s.role == Role::Target && r.d_treat == 1)
        throw Error(ErrorCode::TreatedUnitInTarget, "target site '" + s.site_id + "' has a treated unit");
      if (cluster && s.role == Role::Target && *r.period != 0)
        throw Error(ErrorCode::InconsistentSite, "target site may only contain baseline rows");
      if (cluster && *r.period == 1 && r.d_treat != *s.cluster_treatment)
        throw Error(ErrorCode::InconsistentSite, "follow-up treatment differs from cluster assignment in '" + s.site_id + "'");
    }
  }
}

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::optional<Role> parse_role(const std::string& raw) {
  const std::string s = lower(raw);
  if (s == "target" || s == "1" || s == "true") return Role::Target;
  if (s == "experimental" || s == "0" || s == "false") return Role::Experimental;
  return std::nullopt;
}

}  // namespace

Dataset parse_csv(const std::string& text, const CsvSchema& schema) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::IoError, "empty CSV input");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // UTF-8 BOM
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);

  auto require = [&](const std::string& name) {
    auto it = col.find(name);
    if (it == col.end()) throw Error(ErrorCode::MissingColumn, "column '" + name + "' not found");
    return it->second;
  };
  const std::size_t c_site = require(schema.site);
  const std::size_t c_d = require(schema.treatment);
  const std::size_t c_y = require(schema.outcome);

  std::vector<std::size_t> c_x;
  if (!schema.covariates.empty()) {
    for (const auto& name : schema.covariates) c_x.push_back(require(name));
  } else {
    for (int j = 1;; ++j) {
      auto it = col.find("X" + std::to_string(j));
      if (it == col.end()) break;
      c_x.push_back(it->second);
    }
    if (c_x.empty()) throw Error(ErrorCode::MissingColumn, "no covariate columns X1..Xd found");
  }

  std::optional<std::size_t> c_role;
  if (!schema.target_site) {
    auto it = col.find(schema.role);
    if (it == col.end()) throw Error(ErrorCode::NoTargetSite, "no role column '" + schema.role + "' and no target site given");
    c_role = it->second;
  }
  std::optional<std::size_t> c_unit;
  if (schema.unit) {
    c_unit = require(*schema.unit);
  } else if (auto it = col.find("unit"); it != col.end()) {
    c_unit = it->second;
  }
  std::optional<std::size_t> c_period;
  if (schema.period) {
    c_period = require(*schema.period);
  } else if (schema.design == Design::ClusterLevel) {
    c_period = require("period");
  }

  Dataset ds;
  ds.d = static_cast<int>(c_x.size());
  ds.design = schema.design;
  ds.sampling = schema.sampling;
  std::unordered_map<std::string, std::size_t> site_pos;
  std::vector<std::optional<Role>> roles;
  std::set<std::tuple<std::string, std::string, int>> seen_units;

  long row = 0;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    ++row;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw Error(ErrorCode::InconsistentSite, "row " + std::to_string(row) + " has " + std::to_string(f.size()) +
                                                   " fields, header has " + std::to_string(header.size()));
    auto number = [&](std::size_t c) {
      double v;
      if (!parse_double(f[c], v))
        throw Error(ErrorCode::NonNumericValue,
                    "row " + std::to_string(row) + ", column '" + header[c] + "': '" + f[c] + "'");
      return v;
    };
    auto integer01 = [&](std::size_t c) {
      const double v = number(c);
      if (v != 0.0 && v != 1.0)
        throw Error(ErrorCode::NonNumericValue,
                    "row " + std::to_string(row) + ", column '" + header[c] + "' must be 0 or 1");
      return static_cast<int>(v);
    };

    UnitRecord r;
    r.site_id = f[c_site];
    if (r.site_id.empty()) throw Error(ErrorCode::NonNumericValue, "row " + std::to_string(row) + " has an empty site id");
    r.d_treat = integer01(c_d);
    r.y = number(c_y);
    r.x.reserve(c_x.size());
    for (auto c : c_x) r.x.push_back(number(c));
    if (c_period) r.period = integer01(*c_period);
    if (c_unit) {
      r.unit_id = f[*c_unit];
      if (!seen_units.emplace(r.site_id, *r.unit_id, r.period.value_or(0)).second)
        throw Error(ErrorCode::DuplicateUnit,
                    "unit '" + *r.unit_id + "' repeated in site '" + r.site_id + "' (row " + std::to_string(row) + ")");
    }

    Role role = Role::Experimental;
    if (schema.target_site) {
      role = r.site_id == *schema.target_site ? Role::Target : Role::Experimental;
    } else {
      auto parsed = parse_role(f[*c_role]);
      if (!parsed) throw Error(ErrorCode::NonNumericValue, "row " + std::to_string(row) + " has unknown role '" + f[*c_role] + "'");
      role = *parsed;
    }

    auto [it, inserted] = site_pos.emplace(r.site_id, ds.sites.size());
    if (inserted) {
      SiteSample s;
      s.site_id = r.site_id;
      s.role = role;
      ds.sites.push_back(std::move(s));
    } else if (ds.sites[it->second].role != role) {
      throw Error(ErrorCode::InconsistentSite, "site '" + r.site_id + "' has mixed roles");
    }
    ds.sites[it->second].records.push_back(std::move(r));
  }

  if (ds.design == Design::ClusterLevel) {
    for (auto& s : ds.sites) {
      std::optional<int> dg;
      for (const auto& r : s.records) {
        if (*r.period != 1) continue;
        if (dg && *dg != r.d_treat)
          throw Error(ErrorCode::InconsistentSite, "mixed follow-up treatment within cluster '" + s.site_id + "'");
        dg = r.d_treat;
      }
      s.cluster_treatment = dg.value_or(0);
      for (const auto& r : s.records)
        if (*r.period == 0 && r.d_treat != 0 && r.d_treat != *s.cluster_treatment)
          throw Error(ErrorCode::InconsistentSite, "baseline treatment inconsistent in cluster '" + s.site_id + "'");
    }
  }
  if (ds.sampling == Sampling::Sparse) {
    for (auto& s : ds.sites) {
      std::vector<std::vector<double>> xs;
      for (const auto& r : s.records) xs.push_back(r.x);
      s.covariate_density = fit_density(schema.sparse_density, xs);
    }
  }
  validate(ds);
  return ds;
}

Dataset ingest_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw Error(ErrorCode::IoError, "cannot format number");
  return std::string(buf.data(), ptr);
}

namespace {

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos && s == trim(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string format_csv(const Dataset& ds) {
  bool has_unit = false, has_period = false;
  for (const auto& s : ds.sites)
    for (const auto& r : s.records) {
      has_unit |= r.unit_id.has_value();
      has_period |= r.period.has_value();
    }
  std::ostringstream out;
  out << "site,role";
  if (has_unit) out << ",unit";
  if (has_period) out << ",period";
  out << ",D,Y";
  for (int j = 1; j <= ds.d; ++j) out << ",X" << j;
  out << "\n";
  for (const auto& s : ds.sites) {
    for (const auto& r : s.records) {
      out << quote_if_needed(s.site_id) << ',' << to_string(s.role);
      if (has_unit) out << ',' << quote_if_needed(r.unit_id.value_or(""));
      if (has_period) out << ',' << r.period.value_or(0);
      out << ',' << r.d_treat << ',' << format_double(r.y);
      for (double v : r.x) out << ',' << format_double(v);
      out << "\n";
    }
  }
  return out.str();
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path.string() + "'");
  out << format_csv(ds);
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path.string() + "'");
}

DatasetSummary summarize(const Dataset& ds) {
  DatasetSummary out;
  out.d = ds.d;
  out.design = ds.design;
  out.sampling = ds.sampling;
  out.covariate_mean.assign(ds.d, 0.0);
  out.covariate_sd.assign(ds.d, 0.0);
  std::size_t total = 0;
  double ysum = 0.0;
  for (const auto& s : ds.sites) {
    SiteSummary ss;
    ss.site_id = s.site_id;
    ss.role = s.role;
    ss.n = s.records.size();
    ss.cluster_treatment = s.cluster_treatment;
    for (const auto& r : s.records) {
      ss.n_treated += r.d_treat;
      for (int j = 0; j < ds.d; ++j) out.covariate_mean[j] += r.x[j];
      ysum += r.y;
    }
    total += ss.n;
    out.sites.push_back(ss);
  }
  if (total == 0) return out;
  for (auto& m : out.covariate_mean) m /= static_cast<double>(total);
  for (const auto& s : ds.sites)
    for (const auto& r : s.records)
      for (int j = 0; j < ds.d; ++j) out.covariate_sd[j] += (r.x[j] - out.covariate_mean[j]) * (r.x[j] - out.covariate_mean[j]);
  for (auto& v : out.covariate_sd) v = std::sqrt(v / static_cast<double>(total));
  out.outcome_mean = ysum / static_cast<double>(total);
  return out;
}

}  // namespace cate
