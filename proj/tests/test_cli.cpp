#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "cate/serialize.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cate;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string err;
};

Run cli(const fs::path& dir, const std::string& args) {
  const auto err = dir / "stderr.txt";
  const std::string cmd = "cd '" + dir.string() + "' && '" CATE_CLI "' " + args + " 2> '" + err.string() + "' > /dev/null";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(err);
  std::stringstream ss;
  ss << in.rdbuf();
  r.err = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_population(const fs::path& p, const PopulationConfig& c) { write_json(json(c), p); }

// Rank one heterogeneity with constant f, h and mu0 and no noise. Every
// second-moment surface is then constant, which local linear fits exactly.
PopulationConfig rank_one(int G) {
  auto c = testing::legendre_population(G, {0}, {0}, {1.0});
  c.mu0 = AnalyticFunction::constant(1.0);
  c.B = Eigen::MatrixXd::Constant(1, 1, 0.7);
  return c;
}

}  // namespace

TEST_CASE("simulate creates the output directory and is deterministic") {
  const auto dir = testing::temp_dir("cli_sim");
  write_population(dir / "pop.json", rank_one(8));
  REQUIRE(cli(dir, "--seed 3 --out a/b simulate --population pop.json --n 20").code == 0);
  REQUIRE(cli(dir, "--seed 3 --out a/b2 simulate --population pop.json --n 20").code == 0);
  CHECK(fs::exists(dir / "a/b/dataset.csv"));
  CHECK(slurp(dir / "a/b/dataset.csv") == slurp(dir / "a/b2/dataset.csv"));
  const auto pop = read_json(dir / "a/b/population.json");
  CHECK(pop.at("seed") == 3);
  CHECK(pop.at("run_config").at("n") == 20);
  CHECK(pop.at("site_ids").size() == 8);
  REQUIRE(cli(dir, "--seed 4 --out c simulate --population pop.json --n 20").code == 0);
  CHECK(slurp(dir / "a/b/dataset.csv") != slurp(dir / "c/dataset.csv"));
  fs::remove_all(dir);
}

TEST_CASE("exit codes follow the error category") {
  const auto dir = testing::temp_dir("cli_codes");
  write_population(dir / "pop.json", rank_one(6));
  REQUIRE(cli(dir, "--out sim simulate --population pop.json --n 20").code == 0);

  SUBCASE("malformed config is a validation error with its location") {
    std::ofstream(dir / "bad.json") << "{\n  \"K\": 2,\n  \"a\": ,\n}\n";
    const auto r = cli(dir, "--config bad.json estimate --input sim/dataset.csv");
    CHECK(r.code == 1);
    CHECK(r.err.find("line 3") != std::string::npos);
  }
  SUBCASE("unknown config keys are rejected") {
    std::ofstream(dir / "extra.json") << "{\"bandwith\": 0.2}";
    const auto r = cli(dir, "--config extra.json estimate --input sim/dataset.csv");
    CHECK(r.code == 1);
    CHECK(r.err.find("bandwith") != std::string::npos);
  }
  SUBCASE("missing target site is a data error") {
    std::ofstream(dir / "notarget.csv") << "site,D,Y,X1\na,0,1,0.1\na,1,2,0.2\nb,0,1,0.3\nb,1,2,0.4\nc,0,1,0.5\n";
    const auto r = cli(dir, "estimate --input notarget.csv");
    CHECK(r.code == 2);
    CHECK(r.err.find("NoTargetSite") != std::string::npos);
  }
  SUBCASE("K larger than the grid is a validation error") {
    CHECK(cli(dir, "estimate --input sim/dataset.csv --grid-points 4 --K 5").code == 1);
  }
  SUBCASE("unparseable flags") {
    CHECK(cli(dir, "estimate --input sim/dataset.csv --K two").code == 1);
    CHECK(cli(dir, "").code == 1);
  }
  SUBCASE("missing input file") { CHECK(cli(dir, "estimate --input nope.csv").code == 2); }
  fs::remove_all(dir);
}

TEST_CASE("noiseless rank-one population is recovered end to end") {
  const auto dir = testing::temp_dir("cli_rank1");
  const auto cfg = rank_one(12);
  write_population(dir / "pop.json", cfg);
  REQUIRE(cli(dir, "--seed 11 --out sim simulate --population pop.json --n 60").code == 0);
  REQUIRE(cli(dir, "--out est estimate --input sim/dataset.csv --grid-points 8 --a 1e-8 --K 1 --h-mu 0.5 --h-H 0.5")
              .code == 0);
  REQUIRE(cli(dir, "--out pred predict --estimate-dir est --K-use 0,1").code == 0);

  const auto basis = basis_from_json(read_json(dir / "est/basis.json").at("basis"));
  const auto preds = predictions_from_json(read_json(dir / "pred/predictions.json").at("predictions"), basis.grid);
  REQUIRE(preds.size() == 2);
  CHECK(preds[0].K_used == 0);
  CHECK(preds[0].tau_hat.values == preds[0].tau_mean.values);

  const auto popj = read_json(dir / "sim/population.json");
  const auto pop = generate_population(cfg, popj.at("population_seed").get<std::uint64_t>());
  const auto target_id = popj.at("target_id").get<std::string>();
  int t = -1;
  for (int g = 0; g < pop.G(); ++g)
    if (synthetic_site_id(g) == target_id) t = g;
  REQUIRE(t >= 0);
  const auto truth = sample(basis.grid, [&](auto x) { return pop.tau(t, x); });
  CHECK(preds[1].site_id == target_id);
  CHECK((preds[1].tau_hat.values - truth.values).cwiseAbs().maxCoeff() < 1e-3);

  const auto csv = slurp(dir / "pred/predictions.csv");
  CHECK(csv.rfind("site,K,average_effect\n", 0) == 0);
  CHECK(csv.find(target_id + ",1,") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cv echoes singleton grids and the rate-rule grid; estimate reads the report") {
  const auto dir = testing::temp_dir("cli_cv");
  auto cfg = rank_one(8);
  cfg.sigma = 0.2;
  write_population(dir / "pop.json", cfg);
  REQUIRE(cli(dir, "--out sim simulate --population pop.json --n 40").code == 0);
  REQUIRE(cli(dir, "--out cv1 cv --input sim/dataset.csv --grid-points 8 --h-mu-grid 0.4 --h-H-grid 0.6 --a-grid 0.05")
              .code == 0);
  const auto r1 = read_json(dir / "cv1/cv_report.json").at("report");
  CHECK(r1.at("h_mu").at("chosen") == 0.4);
  CHECK(r1.at("h_H").at("chosen") == 0.6);
  CHECK(r1.at("a").at("chosen") == 0.05);

  REQUIRE(cli(dir, "--out cv2 cv --input sim/dataset.csv --grid-points 8 --rate-multipliers 1 --a-grid 0.1").code == 0);
  const auto j2 = read_json(dir / "cv2/cv_report.json");
  CHECK(j2.at("h_mu_grid").at(0).get<double>() == j2.at("report").at("rate_rule_h").get<double>());

  REQUIRE(cli(dir, "--out est estimate --input sim/dataset.csv --grid-points 8 --cv-report cv1/cv_report.json").code == 0);
  const auto est = read_json(dir / "est/estimate.json");
  CHECK(est.at("spec_mu").at("h") == 0.4);
  CHECK(est.at("spec_H").at("h") == 0.6);
  CHECK(est.at("a") == 0.05);
  fs::remove_all(dir);
}

TEST_CASE("fpca comparison favours the optimal basis when the signal is not the leading component") {
  const auto dir = testing::temp_dir("cli_fpca");
  write_population(dir / "pop.json", testing::predictive_ordering_config());
  REQUIRE(cli(dir, "--out sim simulate --population pop.json --n 100").code == 0);
  REQUIRE(cli(dir, "--out fp fpca --input sim/dataset.csv --grid-points 12 --weight-density uniform --K 1 --a 0.01"
                   " --truth sim/population.json")
              .code == 0);
  const auto rows = read_json(dir / "fp/comparison.json").at("comparison");
  REQUIRE(rows.size() == 1);
  const double opt = rows[0].at("oracle_imse_optimal").get<double>();
  const double fpc = rows[0].at("oracle_imse_fpc").get<double>();
  CHECK(opt < fpc);
  CHECK(rows[0].at("plugin_imse_optimal").get<double>() < rows[0].at("plugin_imse_fpc").get<double>());
  CHECK(fs::exists(dir / "fp/fpc.json"));
  fs::remove_all(dir);
}
