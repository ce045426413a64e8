#include <gtest/gtest.h>

#include <sstream>

#include "fixtures.hpp"

using namespace bipgps;

namespace {

EstimatorSpec spec_of(EstimatorKind k) {
  EstimatorSpec s;
  s.kind = k;
  return s;
}

StudyConfig small_study(std::size_t n_sims) {
  StudyConfig c;
  c.dgp.graph.n_outcome = 200;
  c.dgp.graph.m_diversion = 40;
  c.dgp.graph.deg_max = 6;
  c.methods = {{"naive", spec_of(EstimatorKind::naive_ols), IntervalMethod::naive_bootstrap},
               {"cells", spec_of(EstimatorKind::gps_cells), IntervalMethod::none},
               {"param", spec_of(EstimatorKind::naive_ols), IntervalMethod::parametric_bootstrap}};
  c.n_sims = n_sims;
  c.boot.B = 50;
  c.seed = 17;
  return c;
}

std::string study_csv(const SimStudyResult& r) {
  std::ostringstream out;
  write_study_csv(out, r);
  write_replicates_csv(out, r);
  return out.str();
}

}  // namespace

TEST(Outcomes, NoiselessHomogeneous) {
  GraphSpec gs;
  gs.n_outcome = 100;
  gs.m_diversion = 20;
  Rng rng = substream(1);
  auto g = synth_graph(gs, rng);
  DgpSpec dgp;
  dgp.sigma2_eps = 0.0;
  auto e = linear_exposure(g, draw_assignment(dgp.design, 20, rng));
  auto y = generate_outcomes(dgp, g, e, rng);
  const double c = homogeneous_effect(g);
  for (std::size_t i = 0; i < y.size(); ++i) EXPECT_DOUBLE_EQ(y[i], c * e[i]);
}

TEST(Outcomes, IdiosyncraticVariance) {
  std::vector<std::vector<Edge>> rows(100000, std::vector<Edge>{{0, 1.0}});
  BipartiteGraph g(100000, 1, rows, true);
  DgpSpec dgp;
  dgp.sigma2_eps = 0.5;
  ExposureProfile e{std::vector<double>(100000, 0.0)};
  Rng rng = substream(2);
  auto y = generate_outcomes(dgp, g, e, rng);
  EXPECT_NEAR(sample_variance(y), 0.5, 0.01);
}

TEST(Outcomes, SharedNeighborCorrelation) {
  BipartiteGraph g(2, 1, {{{0, 1.0}}, {{0, 1.0}}});
  DgpSpec dgp;
  dgp.sigma2_eps = 0.5;
  dgp.sigma2_gamma = 0.5;
  ExposureProfile e{{0.0, 0.0}};
  Rng rng = substream(3);
  const int draws = 100000;
  double s01 = 0, s00 = 0, s11 = 0;
  for (int t = 0; t < draws; ++t) {
    auto y = generate_outcomes(dgp, g, e, rng);
    s01 += y[0] * y[1];
    s00 += y[0] * y[0];
    s11 += y[1] * y[1];
  }
  EXPECT_NEAR(s01 / std::sqrt(s00 * s11), 0.5, 0.01);
}

TEST(Study, NoiselessCorrectModelHasZeroBias) {
  StudyConfig c;
  c.dgp.graph.n_outcome = 300;
  c.dgp.graph.m_diversion = 50;
  c.dgp.effect = EffectForm::heterogeneous;
  c.dgp.sigma2_eps = 0.0;
  c.methods = {{"deg", spec_of(EstimatorKind::degree_ols), IntervalMethod::none}};
  c.n_sims = 1;
  auto r = run_study(c);
  ASSERT_EQ(r.n_sims, 1u);
  EXPECT_NEAR(r.methods[0].bias, 0.0, 1e-9);
}

TEST(Study, ZeroSimulationsIsRejected) {
  auto c = small_study(0);
  EXPECT_THROW(run_study(c), ConfigError);
}

TEST(Study, ParametricNeedsARegression) {
  auto c = small_study(2);
  c.methods = {{"bad", spec_of(EstimatorKind::gps_krr), IntervalMethod::parametric_bootstrap}};
  EXPECT_THROW(run_study(c), ConfigError);
}

TEST(Study, DeterministicAcrossRunsAndWorkers) {
  auto c = small_study(6);
  auto a = run_study(c);
  auto b = run_study(c);
  c.workers = 3;
  auto d = run_study(c);
  EXPECT_EQ(study_csv(a), study_csv(b));
  EXPECT_EQ(study_csv(a), study_csv(d));
  EXPECT_EQ(a.methods[0].n_ok, 6u);
  EXPECT_FALSE(std::isnan(a.methods[0].coverage));
  EXPECT_TRUE(std::isnan(a.methods[1].coverage));
}

TEST(Study, SeedChangesResults) {
  auto c = small_study(3);
  auto a = run_study(c);
  c.seed = 18;
  auto b = run_study(c);
  EXPECT_NE(study_csv(a), study_csv(b));
}

TEST(Study, CancelledBeforeStartKeepsNothing) {
  auto c = small_study(4);
  std::atomic<bool> stop{true};
  c.cancel = &stop;
  auto r = run_study(c);
  EXPECT_TRUE(r.partial);
  EXPECT_EQ(r.n_sims, 0u);
}

TEST(Study, RedrawnGraphsDiffer) {
  auto c = small_study(3);
  c.methods = {{"cells", spec_of(EstimatorKind::gps_cells), IntervalMethod::none}};
  auto fixed = run_study(c);
  c.dgp.redraw_graph = true;
  auto redrawn = run_study(c);
  // Homogeneous truth is the mean degree, constant for a fixed graph.
  EXPECT_EQ(fixed.truth[0], fixed.truth[2]);
  EXPECT_NE(redrawn.truth[0], redrawn.truth[2]);
}

TEST(Study, TableLayout) {
  auto r = run_study(small_study(2));
  std::ostringstream out;
  write_table_layout_csv(out, r);
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> first;
  while (std::getline(in, line)) first.push_back(line.substr(0, line.find(',')));
  EXPECT_EQ(first, (std::vector<std::string>{"metric", "Bias", "RMSE", "Coverage"}));
}

TEST(Study, MonteCarloAndProductFormScores) {
  auto c = small_study(2);
  c.methods = {{"ht", spec_of(EstimatorKind::ht_ratio), IntervalMethod::none}};
  c.dgp.gps.mode = GpsMode::monte_carlo;
  c.dgp.gps.draws = 2000;
  EXPECT_EQ(run_study(c).methods[0].n_ok, 2u);
  c.dgp.gps.mode = GpsMode::product_form;
  EXPECT_EQ(run_study(c).methods[0].n_ok, 2u);
}

TEST(Sweep, RowsPerShareAndDeterminism) {
  SweepConfig c;
  c.graph.kind = GraphKind::blocks;
  c.graph.n_outcome = 200;
  c.graph.m_diversion = 50;
  c.graph.deg_max = 5;
  c.graph.blocks = 10;
  c.shares = {0.0, 0.25, 0.5};
  c.n_sims = 3;
  c.boot.B = 50;
  c.seed = 5;
  auto a = edges_cut_sweep(c);
  auto b = edges_cut_sweep(c);
  ASSERT_EQ(a.rows.size(), 3u);
  std::ostringstream sa, sb;
  write_sweep_csv(sa, a);
  write_sweep_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_DOUBLE_EQ(a.rows[0].realized_share, 0.0);
  EXPECT_NEAR(a.rows[2].realized_share, 0.5, 0.05);
  c.graph.kind = GraphKind::uniform_degree;
  EXPECT_THROW(edges_cut_sweep(c), ConfigError);
}
