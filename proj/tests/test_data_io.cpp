#include <doctest.h>

#include <cstdlib>
#include <cstring>
#include <fstream>

#include "cate/serialize.hpp"
#include "support.hpp"

using namespace cate;
using testing::error_code_of;

namespace {

const char* kThreeSites =
    "site,role,D,Y,X1\n"
    "a,experimental,0,1.5,0.1\n"
    "a,experimental,1,2.5,0.2\n"
    "b,experimental,0,0.5,0.3\n"
    "b,experimental,1,1.0,0.4\n"
    "t,target,0,3.0,0.5\n"
    "t,target,0,3.5,0.6\n";

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("three-site CSV parses into G=3, d=1") {
  const auto ds = parse_csv(kThreeSites);
  CHECK(ds.num_sites() == 3);
  CHECK(ds.d == 1);
  CHECK(ds.sites[0].site_id == "a");
  CHECK(ds.sites[2].role == Role::Target);
  CHECK(ds.target_index() == 2);
  CHECK(ds.sites[1].records[1].y == 1.0);
  CHECK(ds.sites[1].records[1].x[0] == 0.4);
}

TEST_CASE("site order is first appearance and row order is kept") {
  const auto ds = parse_csv(
      "site,role,D,Y,X1\n"
      "z,experimental,0,1,0.1\n"
      "t,target,0,2,0.2\n"
      "m,experimental,1,3,0.3\n"
      "z,experimental,1,4,0.4\n"
      "m,experimental,0,5,0.5\n");
  REQUIRE(ds.num_sites() == 3);
  CHECK(ds.sites[0].site_id == "z");
  CHECK(ds.sites[1].site_id == "t");
  CHECK(ds.sites[2].site_id == "m");
  CHECK(ds.sites[0].records[1].y == 4.0);
  CHECK(ds.sites[2].records[0].y == 3.0);
}

TEST_CASE("treated row in the target site is rejected") {
  std::string csv = kThreeSites;
  csv += "t,target,1,1.0,0.7\n";
  CHECK(error_code_of([&] { parse_csv(csv); }) == ErrorCode::TreatedUnitInTarget);
}

TEST_CASE("non-numeric covariate reports the data row") {
  const std::string csv =
      "site,role,D,Y,X1\n"
      "a,experimental,0,1,0.1\n"
      "a,experimental,1,1,0.2\n"
      "b,experimental,0,1,0.3\n"
      "b,experimental,1,1,0.4\n"
      "t,target,0,1,abc\n";
  try {
    parse_csv(csv);
    FAIL("expected NonNumericValue");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonNumericValue);
    CHECK(std::string(e.what()).find("row 5") != std::string::npos);
    CHECK(std::string(e.what()).find("X1") != std::string::npos);
  }
}

TEST_CASE("structural errors") {
  CHECK(error_code_of([] { parse_csv("site,role,D,X1\na,target,0,1\n"); }) == ErrorCode::MissingColumn);
  CHECK(error_code_of([] { parse_csv("site,D,Y,X1\na,0,1,1\nb,0,1,1\nc,0,1,1\n"); }) == ErrorCode::NoTargetSite);
  CHECK(error_code_of([] {
          parse_csv("site,role,D,Y,X1\na,experimental,0,1,1\nb,experimental,0,1,1\nc,experimental,0,1,1\n");
        }) == ErrorCode::NoTargetSite);
  CHECK(error_code_of([] {
          parse_csv("site,role,D,Y,X1\na,target,0,1,1\nb,target,0,1,1\nc,experimental,0,1,1\n");
        }) == ErrorCode::MultipleTargetSites);
  CHECK(error_code_of([] {
          parse_csv("site,role,unit,D,Y,X1\na,experimental,u1,0,1,1\na,experimental,u1,1,1,1\n"
                    "b,experimental,u1,0,1,1\nt,target,u1,0,1,1\n");
        }) == ErrorCode::DuplicateUnit);
  CHECK(error_code_of([] { parse_csv("site,role,D,Y,X1\na,experimental,0,1,1\nt,target,0,1,1\n"); }) ==
        ErrorCode::InconsistentSite);
  CHECK(error_code_of([] { ingest_csv("/nonexistent/cate/file.csv"); }) == ErrorCode::IoError);
}

TEST_CASE("explicit target site replaces the role column") {
  CsvSchema schema;
  schema.target_site = "c";
  const auto ds = parse_csv("site,D,Y,X1\na,0,1,1\na,1,1,1\nb,0,1,1\nc,0,1,1\n", schema);
  CHECK(ds.sites[ds.target_index()].site_id == "c");
}

TEST_CASE("cluster-level CSV derives the cluster treatment from follow-up rows") {
  CsvSchema schema;
  schema.design = Design::ClusterLevel;
  const auto ds = parse_csv(
      "site,role,unit,period,D,Y,X1\n"
      "a,experimental,u1,0,0,1,0.1\n"
      "a,experimental,u1,1,1,2,0.1\n"
      "b,experimental,u1,0,0,1,0.2\n"
      "b,experimental,u1,1,0,1,0.2\n"
      "t,target,u1,0,0,1,0.3\n",
      schema);
  CHECK(ds.sites[0].cluster_treatment == 1);
  CHECK(ds.sites[1].cluster_treatment == 0);
  CHECK(ds.sites[0].records[1].period == 1);
}

TEST_CASE("sparse sampling attaches a fitted density per site") {
  CsvSchema schema;
  schema.sampling = Sampling::Sparse;
  const auto ds = parse_csv(kThreeSites, schema);
  for (const auto& s : ds.sites) {
    REQUIRE(s.covariate_density);
    CHECK(s.covariate_density->family == DensityFamily::Gaussian);
  }
  CHECK(ds.sites[0].covariate_density->loc[0] == doctest::Approx(0.15));
}

TEST_CASE("ingest(write(ingest(f))) equals ingest(f)") {
  const auto dir = testing::temp_dir("csv");
  auto pop = generate_population(testing::legendre_population(5, {1, 2}, {1, 2}, {1.0, 0.5}), 3);
  pop.config.sigma = 0.3;
  AssignmentProtocol proto;
  proto.seed = 9;
  const auto ds = sample_dataset(pop, 20, proto);
  write_csv(ds, dir / "a.csv");
  const auto first = ingest_csv(dir / "a.csv");
  CHECK(first == ds);
  write_csv(first, dir / "b.csv");
  const auto second = ingest_csv(dir / "b.csv");
  CHECK(second == first);
  std::ifstream fa(dir / "a.csv"), fb(dir / "b.csv");
  std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  CHECK(sa == sb);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cluster-level round trip keeps periods and units") {
  auto pop = generate_population(testing::legendre_population(6, {1}, {1}, {1.0}), 4);
  AssignmentProtocol proto;
  proto.design = Design::ClusterLevel;
  proto.seed = 2;
  const auto ds = sample_dataset(pop, 5, proto);
  CsvSchema schema;
  schema.design = Design::ClusterLevel;
  CHECK(parse_csv(format_csv(ds), schema) == ds);
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 5e-324}) {
    double back = std::strtod(format_double(v).c_str(), nullptr);
    CHECK(same_bits(v, back));
  }
}

TEST_CASE("BasisSet JSON has K-sized arrays and reads back bit-exactly") {
  const auto grid = testing::unit_grid(1, 8);
  BasisSet b;
  b.grid = grid;
  b.a = 0.1;
  b.K = b.requested_K = 2;
  b.lambda = {1.0 / 3.0, 1e-7};
  for (int k = 0; k < 2; ++k) {
    b.phi.push_back(sample(grid, [k](auto x) { return std::sin(3.1 * (k + 1) * x[0]); }));
    b.psi.push_back(sample(grid, [k](auto x) { return std::exp(-x[0] * (k + 0.7)); }));
  }
  const json j = basis_to_json(b);
  CHECK(j["schema_version"] == kSchemaVersion);
  CHECK(j["lambda"].size() == 2);
  CHECK(j["phi"].size() == 2);
  CHECK(j["phi"][0].size() == 8);
  CHECK(j["psi"][1].size() == 8);

  const auto dir = testing::temp_dir("basis");
  write_json(j, dir / "nested" / "basis.json");
  const auto back = basis_from_json(read_json(dir / "nested" / "basis.json"));
  CHECK(same_grid(*back.grid, *grid));
  CHECK(back.K == 2);
  for (int k = 0; k < 2; ++k) {
    CHECK(same_bits(back.lambda[k], b.lambda[k]));
    for (Eigen::Index i = 0; i < 8; ++i) {
      CHECK(same_bits(back.phi[k].values[i], b.phi[k].values[i]));
      CHECK(same_bits(back.psi[k].values[i], b.psi[k].values[i]));
    }
  }
  for (Eigen::Index i = 0; i < 8; ++i) CHECK(same_bits(back.grid->weights[i], grid->weights[i]));
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty prediction set is an empty array") {
  const auto grid = testing::unit_grid(1, 8);
  const json j = {{"schema_version", kSchemaVersion}, {"predictions", predictions_to_json({})}};
  CHECK(j["predictions"].is_array());
  CHECK(j["predictions"].empty());
  const auto back = parse_json(j.dump());
  CHECK(predictions_from_json(back["predictions"], grid).empty());
}

TEST_CASE("dataset summary round trip") {
  auto pop = generate_population(testing::legendre_population(8, {1}, {1}, {1.0}), 11);
  pop.config.sigma = 0.2;
  AssignmentProtocol proto;
  proto.seed = 5;
  const auto s = summarize(sample_dataset(pop, 30, proto));
  const auto dir = testing::temp_dir("summary");
  write_json(json(s), dir / "summary.json");
  const auto back = read_json(dir / "summary.json").get<DatasetSummary>();
  CHECK(back == s);
  std::filesystem::remove_all(dir);
}

TEST_CASE("bad JSON reports line and column") {
  try {
    parse_json("{\n  \"a\": 1,\n  \"b\": ]\n}", "cfg.json");
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidConfig);
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
}

TEST_CASE("unwritable path is an IoError") {
  CHECK(error_code_of([] { write_json(json::object(), "/proc/cate-not-writable/x.json"); }) == ErrorCode::IoError);
}
