#pragma once

// JSON forms of the artifacts. Doubles are written in shortest round-trip
// form, so reading an artifact back reproduces every value bit for bit.
// Non-finite doubles are written as null.

#include <filesystem>

#include <json.hpp>

#include "cate/basis.hpp"
#include "cate/dataset.hpp"
#include "cate/grid.hpp"
#include "cate/kernel.hpp"
#include "cate/operators.hpp"
#include "cate/simulator.hpp"
#include "cate/transfer.hpp"
#include "cate/tuning.hpp"

namespace cate {

using json = nlohmann::json;

constexpr int kSchemaVersion = 1;

void to_json(json& j, const DensitySpec& f);
void from_json(const json& j, DensitySpec& f);
void to_json(json& j, const KernelSpec& k);
void from_json(const json& j, KernelSpec& k);
void to_json(json& j, const BasisOptions& o);
void from_json(const json& j, BasisOptions& o);
void to_json(json& j, const QuadratureGrid& g);
void to_json(json& j, const LocalFitDiagnostics& d);
void to_json(json& j, const ScoreVector& s);
void from_json(const json& j, ScoreVector& s);
void to_json(json& j, const DatasetSummary& s);
void from_json(const json& j, DatasetSummary& s);
void to_json(json& j, const CvSelection& s);
void to_json(json& j, const CvReport& r);
void to_json(json& j, const RateTable& t);
void to_json(json& j, const AnalyticFunction& f);
void from_json(const json& j, AnalyticFunction& f);
void to_json(json& j, const PopulationConfig& c);
void from_json(const json& j, PopulationConfig& c);

GridPtr grid_from_json(const json& j);

json function_to_json(const DiscretizedFunction& f);
DiscretizedFunction function_from_json(const json& j, const GridPtr& grid);
json operator_to_json(const OperatorMatrix& m);
OperatorMatrix operator_from_json(const json& j, const GridPtr& grid);

//! Includes the grid unless `with_grid` is false.
json basis_to_json(const BasisSet& b, bool with_grid = true);
//! Uses `grid` when given, else the embedded grid.
BasisSet basis_from_json(const json& j, GridPtr grid = nullptr);
json fpc_to_json(const FpcBasis& b, bool with_grid = true);
FpcBasis fpc_from_json(const json& j, GridPtr grid = nullptr);

json prediction_to_json(const CatePrediction& p);
CatePrediction prediction_from_json(const json& j, const GridPtr& grid);
json predictions_to_json(const std::vector<CatePrediction>& ps);
std::vector<CatePrediction> predictions_from_json(const json& j, const GridPtr& grid);

//! Writes `artifact` with a schema_version field (added to objects that
//! lack one). Parent directories are created.
void write_json(const json& artifact, const std::filesystem::path& path);
//! Parse errors are InvalidConfig with line and column; unreadable files
//! are IoError.
json read_json(const std::filesystem::path& path);
json parse_json(const std::string& text, const std::string& source = "input");
void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace cate
