#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "bipgps/cli.hpp"
#include "fixtures.hpp"

using namespace bipgps;
namespace fs = std::filesystem;
using cli::json;

namespace {

const fs::path kPresets = BIPGPS_PRESET_DIR;

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bipgps_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    auto p = dir_ / name;
    std::ofstream(p) << text;
    return p;
  }

  int run(const std::string& command, const fs::path& config, const std::string& out, std::string* err = nullptr,
          std::optional<std::uint64_t> seed = std::nullopt) {
    cli::Options opt;
    opt.command = command;
    opt.config_path = config.string();
    opt.out_dir = (dir_ / out).string();
    opt.seed = seed;
    opt.quiet = true;
    std::ostringstream e;
    int code = cli::run(opt, e);
    if (err) *err = e.str();
    return code;
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
  }

  // value column of the results row (estimator, quantity, level)
  static double result(const std::string& csv, const std::string& est, const std::string& quantity,
                       const std::string& level) {
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
      auto f = csv::split(line);
      if (f.size() > 3 && f[0] == est && f[1] == quantity && f[2] == level) return std::stod(f[3]);
    }
    ADD_FAILURE() << "no row " << est << "/" << quantity << "/" << level;
    return std::nan("");
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SimpleExamplePreset) {
  ASSERT_EQ(run("estimate", kPresets / "simple-example.json", "se"), 0);
  auto csv = slurp(dir_ / "se" / "results.csv");
  EXPECT_NEAR(result(csv, "naive_mean", "ate", "NA"), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(result(csv, "naive_ols", "ate", "NA"), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(result(csv, "naive_mean", "mu", "1"), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(result(csv, "ht", "mu", "1"), 0.5, 1e-12);
  EXPECT_NEAR(result(csv, "gps_cells", "ate", "NA"), 0.5, 1e-12);
  EXPECT_NEAR(result(csv, "gps_cells", "mu", "1"), 0.5, 1e-12);
  auto meta = json::parse(slurp(dir_ / "se" / "estimate.meta.json"));
  EXPECT_EQ(meta["seed"], 1);
  EXPECT_EQ(meta["config_hash"].get<std::string>().size(), 16u);
  EXPECT_EQ(meta["version"], cli::kVersion);
}

TEST_F(CliTest, JsonFormat) {
  cli::Options opt;
  opt.command = "estimate";
  opt.config_path = (kPresets / "simple-example.json").string();
  opt.out_dir = (dir_ / "js").string();
  opt.format = "json";
  opt.quiet = true;
  std::ostringstream err;
  ASSERT_EQ(cli::run(opt, err), 0) << err.str();
  auto rows = json::parse(slurp(dir_ / "js" / "results.json"));
  ASSERT_TRUE(rows.is_array());
  EXPECT_EQ(rows[0]["estimator"], "naive_mean");
}

TEST_F(CliTest, EmptyOutcomesFileIsADataError) {
  fs::copy(kPresets / "simple-example", dir_ / "simple-example");
  write("simple-example/outcomes.csv", "");
  fs::copy(kPresets / "simple-example.json", dir_ / "cfg.json");
  std::string err;
  EXPECT_EQ(run("estimate", dir_ / "cfg.json", "out", &err), 3);
  auto e = json::parse(err);
  EXPECT_EQ(e["error"]["kind"], "data");
}

TEST_F(CliTest, UnknownKeyIsAConfigError) {
  auto cfg = write("cfg.json", R"({"graph": {"kind": "uniform-degree", "n_outcme": 10}})");
  std::string err;
  EXPECT_EQ(run("graph-gen", cfg, "out", &err), 2);
  EXPECT_NE(err.find("n_outcme"), std::string::npos);
  auto bad = write("bad.json", "{not json");
  EXPECT_EQ(run("graph-gen", bad, "out", &err), 2);
  EXPECT_EQ(json::parse(err)["error"]["kind"], "config");
}

TEST_F(CliTest, GraphGenUniform) {
  ASSERT_EQ(run("graph-gen", kPresets / "graph-uniform.json", "g1"), 0);
  ASSERT_EQ(run("graph-gen", kPresets / "graph-uniform.json", "g2"), 0);
  auto a = slurp(dir_ / "g1" / "edges.csv");
  EXPECT_EQ(a, slurp(dir_ / "g2" / "edges.csv"));
  std::istringstream in(a);
  auto loaded = load_edge_list(in, false);
  EXPECT_EQ(loaded.graph.n_outcome(), 1000u);
  EXPECT_LE(loaded.graph.m_diversion(), 100u);
  auto summary = json::parse(slurp(dir_ / "g1" / "summary.json"));
  EXPECT_EQ(summary["n_outcome"], 1000);
  ASSERT_EQ(run("graph-gen", kPresets / "graph-uniform.json", "g3", nullptr, 8), 0);
  EXPECT_NE(a, slurp(dir_ / "g3" / "edges.csv"));
}

TEST_F(CliTest, InvalidDegreeBound) {
  auto cfg = write("cfg.json", R"({"graph": {"n_outcome": 10, "m_diversion": 5, "deg_min": 1, "deg_max": 6}})");
  std::string err;
  EXPECT_EQ(run("graph-gen", cfg, "out", &err), 2);
  EXPECT_NE(err.find("deg_max"), std::string::npos);
}

TEST_F(CliTest, GpsTableForExternalGraph) {
  ASSERT_EQ(run("gps", kPresets / "simple-example.json", "gps"), 2);  // data/estimators keys are foreign to gps
  auto cfg = write("cfg.json", R"({"graph": {"kind": "external-file", "path": ")" +
                                   (kPresets / "simple-example" / "edges.csv").string() +
                                   R"("}, "design": {"p": 0.5}, "gps": {"mode": "exact"}})");
  ASSERT_EQ(run("gps", cfg, "gps"), 0);
  auto text = slurp(dir_ / "gps" / "gps.csv");
  EXPECT_NE(text.find("d1"), std::string::npos);
}

TEST_F(CliTest, SimulateIsDeterministic) {
  auto cfg = write("sim.json", R"({
    "seed": 3,
    "dgp": {"graph": {"n_outcome": 150, "m_diversion": 30, "deg_max": 5}, "effect": "heterogeneous"},
    "methods": [{"name": "naive", "estimator": "naive_ols", "interval": "naive-bootstrap"},
                {"name": "correct", "estimator": "degree_ols", "interval": "ols-asymptotic"}],
    "n_sims": 3,
    "bootstrap": {"B": 50}
  })");
  ASSERT_EQ(run("simulate", cfg, "a"), 0);
  ASSERT_EQ(run("simulate", cfg, "b"), 0);
  for (auto f : {"study.csv", "table.csv", "replicates.csv", "simulate.meta.json"})
    EXPECT_EQ(slurp(dir_ / "a" / f), slurp(dir_ / "b" / f)) << f;
  auto table = slurp(dir_ / "a" / "table.csv");
  EXPECT_EQ(table.substr(0, table.find('\n')), "metric,naive,correct");
}

TEST_F(CliTest, SimulateRejectsZeroSims) {
  auto cfg = write("sim.json", R"({"dgp": {}, "methods": ["naive_ols"], "n_sims": 0})");
  std::string err;
  EXPECT_EQ(run("simulate", cfg, "a", &err), 2);
}

TEST_F(CliTest, KrrBeatsNaiveOnHeterogeneousFixture) {
  // Fixture drawn from the heterogeneous generator; truth is the mean degree.
  GraphSpec gs;
  Rng gr = substream(41, {0});
  auto g = synth_graph(gs, gr);
  auto ids = default_ids(g);
  DgpSpec dgp;
  dgp.effect = EffectForm::heterogeneous;
  Rng zr = substream(41, {1});
  auto z = draw_assignment(dgp.design, g.m_diversion(), zr);
  Rng yr = substream(41, {2});
  auto y = generate_outcomes(dgp, g, linear_exposure(g, z), yr);
  {
    std::ofstream f(dir_ / "edges.csv");
    write_edge_list(f, g, ids);
    std::ofstream a(dir_ / "z.csv");
    a << "diversion_id,z\n";
    for (std::size_t j = 0; j < z.size(); ++j) a << ids.diversion[j] << ',' << int(z.z[j]) << '\n';
    std::ofstream o(dir_ / "y.csv");
    o << "outcome_id,y\n";
    for (std::size_t i = 0; i < y.size(); ++i) o << ids.outcome[i] << ',' << csv::format_double(y[i]) << '\n';
  }
  auto cfg = write("cfg.json", R"({
    "graph": {"kind": "external-file", "path": "edges.csv"},
    "data": {"outcomes": "y.csv", "assignment": "z.csv"},
    "estimators": ["naive_ols", "gps_krr"],
    "grid": [0, 1]
  })");
  std::string err;
  ASSERT_EQ(run("estimate", cfg, "out", &err), 0) << err;
  auto csv = slurp(dir_ / "out" / "results.csv");
  std::vector<std::size_t> all(g.n_outcome());
  std::iota(all.begin(), all.end(), 0);
  const double truth = mean_degree(g, all);
  EXPECT_LT(std::abs(result(csv, "gps_krr", "ate", "NA") - truth),
            std::abs(result(csv, "naive_ols", "ate", "NA") - truth));
}

TEST_F(CliTest, EstimateWithBootstrapInterval) {
  auto cfg = write("cfg.json", R"({
    "graph": {"kind": "external-file", "path": ")" + (kPresets / "simple-example" / "edges.csv").string() + R"("},
    "data": {"outcomes": ")" + (kPresets / "simple-example" / "outcomes.csv").string() + R"(",
             "assignment": ")" + (kPresets / "simple-example" / "assignment.csv").string() + R"("},
    "estimators": ["naive_ols"],
    "interval": {"method": "naive-bootstrap", "B": 200}
  })");
  std::string err;
  ASSERT_EQ(run("estimate", cfg, "out", &err), 0) << err;
  auto csv = slurp(dir_ / "out" / "results.csv");
  EXPECT_NE(csv.find("naive-bootstrap,200"), std::string::npos) << csv;
}
