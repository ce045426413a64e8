#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace bipgps;

namespace {

double mass_at(const ExposureDistribution& d, double e) {
  for (std::size_t k = 0; k < d.level.size(); ++k)
    if (std::abs(d.level[k] - e) < 1e-9) return d.prob[k];
  return 0.0;
}

BipartiteGraph small_uniform(std::uint64_t seed, std::size_t n = 60, std::size_t m = 20) {
  GraphSpec s;
  s.n_outcome = n;
  s.m_diversion = m;
  s.deg_min = 1;
  s.deg_max = 10;
  Rng rng = substream(seed);
  return synth_graph(s, rng);
}

}  // namespace

TEST(ExactGps, SimpleExampleTypes) {
  auto g = fixture::simple_graph(1, 1);
  auto design = AssignmentDesign::bernoulli(0.5);
  auto s = exact_gps(g, design, 0), d = exact_gps(g, design, 1);
  EXPECT_EQ(s.level, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(s.prob, (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(d.level, (std::vector<double>{0.0, 0.5, 1.0}));
  EXPECT_EQ(d.prob, (std::vector<double>{0.25, 0.5, 0.25}));
}

TEST(ExactGps, UnequalWeightsGiveFourAtoms) {
  BipartiteGraph g(1, 2, {{{0, 0.3}, {1, 0.7}}});
  auto d = exact_gps(g, AssignmentDesign::bernoulli(0.5), 0);
  ASSERT_EQ(d.level.size(), 4u);
  for (double e : {0.0, 0.3, 0.7, 1.0}) EXPECT_DOUBLE_EQ(mass_at(d, e), 0.25);
}

TEST(ExactGps, DistributionsSumToOne) {
  auto g = small_uniform(4);
  std::vector<double> p(g.m_diversion());
  for (std::size_t j = 0; j < p.size(); ++j) p[j] = 0.1 + 0.8 * static_cast<double>(j) / static_cast<double>(p.size());
  for (auto design : {AssignmentDesign::bernoulli(0.5), AssignmentDesign::heterogeneous(p)})
    for (std::size_t i = 0; i < g.n_outcome(); ++i) EXPECT_NEAR(exact_gps(g, design, i).total(), 1.0, 1e-12);
}

TEST(ExactGps, CapDirectsToMonteCarlo) {
  std::vector<Edge> row;
  for (std::size_t j = 0; j < 21; ++j) row.push_back({j, 1.0 / 21});
  BipartiteGraph g(1, 21, {row});
  try {
    exact_gps(g, AssignmentDesign::bernoulli(0.5), 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("mc_gps"), std::string::npos);
  }
  EXPECT_NO_THROW(exact_gps(g, AssignmentDesign::bernoulli(0.5), 0, 21));
}

TEST(ExactGps, ClosedFormAtZero) {
  BipartiteGraph g(1, 3, {{{0, 0.2}, {1, 0.3}, {2, 0.5}}});
  auto design = AssignmentDesign::heterogeneous({0.2, 0.6, 0.7});
  auto table = exact_gps_table(g, design);
  EXPECT_NEAR(gps_at(table, 0, 0.0), 0.8 * 0.4 * 0.3, 1e-15);
}

TEST(GpsAt, KnownPropensities) {
  auto g = fixture::simple_graph(1, 1);
  auto table = exact_gps_table(g, AssignmentDesign::bernoulli(0.5));
  EXPECT_DOUBLE_EQ(gps_at(table, 0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(gps_at(table, 1, 1.0), 0.25);
  EXPECT_DOUBLE_EQ(gps_at(table, 0, 0.5), 0.0);
  EXPECT_DOUBLE_EQ(gps_at(table, 1, 0.3), 0.0);
  EXPECT_THROW(gps_at(table, 0, 1.5), DataError);
  EXPECT_THROW(gps_at(table, 0, -0.1), DataError);
  EXPECT_THROW(gps_at(table, 5, 0.0), DataError);
}

TEST(MonteCarloGps, MatchesExactForDType) {
  auto g = fixture::simple_graph(0, 1);
  Rng rng = substream(21);
  auto mc = mc_gps(g, AssignmentDesign::bernoulli(0.5), Bucketing::atoms(), 100000, rng);
  EXPECT_NEAR(gps_at(mc, 0, 0.0), 0.25, 0.01);
  EXPECT_NEAR(gps_at(mc, 0, 0.5), 0.5, 0.01);
  EXPECT_NEAR(gps_at(mc, 0, 1.0), 0.25, 0.01);
  EXPECT_EQ(mc.mode(), GpsMode::monte_carlo);
}

TEST(MonteCarloGps, SingleDrawIsPointMass) {
  auto g = small_uniform(2, 10, 12);
  Rng rng = substream(1);
  auto mc = mc_gps(g, AssignmentDesign::bernoulli(0.5), Bucketing::atoms(), 1, rng);
  for (std::size_t i = 0; i < g.n_outcome(); ++i) {
    ASSERT_EQ(mc.distribution(i).prob.size(), 1u);
    EXPECT_DOUBLE_EQ(mc.distribution(i).prob[0], 1.0);
  }
}

TEST(MonteCarloGps, CompleteTreatmentIsPointMassAtRowSum) {
  BipartiteGraph g(2, 3, {{{0, 0.3}, {1, 0.2}}, {{2, 1.0}}});
  Rng rng = substream(1);
  auto mc = mc_gps(g, AssignmentDesign::completely_randomized(3), Bucketing::atoms(), 50, rng);
  EXPECT_DOUBLE_EQ(gps_at(mc, 0, 0.5), 1.0);
  EXPECT_DOUBLE_EQ(gps_at(mc, 1, 1.0), 1.0);
}

TEST(MonteCarloGps, BinnedHistogramSumsToOne) {
  auto g = small_uniform(8);
  Rng rng = substream(2);
  auto mc = mc_gps(g, AssignmentDesign::bernoulli(0.5), Bucketing::equal_width(20), 2000, rng);
  for (std::size_t i = 0; i < g.n_outcome(); ++i) EXPECT_NEAR(mc.distribution(i).total(), 1.0, 1e-12);
  // Every S-like unit (degree 1) puts half its mass in the top bin.
  for (std::size_t i = 0; i < g.n_outcome(); ++i)
    if (g.degree(i) == 1) EXPECT_NEAR(gps_at(mc, i, 1.0), 0.5, 0.05);
}

TEST(MonteCarloGps, SameSeedSameTable) {
  auto g = small_uniform(3);
  Rng a = substream(77), b = substream(77);
  auto ta = mc_gps(g, AssignmentDesign::bernoulli(0.5), Bucketing::atoms(), 500, a);
  auto tb = mc_gps(g, AssignmentDesign::bernoulli(0.5), Bucketing::atoms(), 500, b);
  for (std::size_t i = 0; i < g.n_outcome(); ++i) {
    EXPECT_EQ(ta.distribution(i).level, tb.distribution(i).level);
    EXPECT_EQ(ta.distribution(i).prob, tb.distribution(i).prob);
  }
}

TEST(ProductGps, Products) {
  std::vector<double> p2{0.5, 0.5}, p9{0.9, 0.1}, p3{0.5, 0.5, 0.5};
  std::vector<std::uint8_t> z10{1, 0}, z11{1, 1}, z111{1, 1, 1};
  EXPECT_DOUBLE_EQ(product_gps(p2, z10), 0.25);
  EXPECT_NEAR(product_gps(p9, z11), 0.09, 1e-15);
  EXPECT_DOUBLE_EQ(product_gps(p3, z111), 0.125);
  BipartiteGraph g(1, 3, {{{0, 1.0 / 3}, {1, 1.0 / 3}, {2, 1.0 / 3}}});
  EXPECT_DOUBLE_EQ(gps_at(exact_gps_table(g, AssignmentDesign::bernoulli(0.5)), 0, g.row_sum(0)), 0.125);
}

TEST(ProductGps, TableUsesObservedAssignment) {
  BipartiteGraph g(2, 3, {{{0, 0.3}, {1, 0.7}}, {{1, 0.5}, {2, 0.5}}});
  Assignment z{{1, 0, 1}};
  auto t = product_form_table(g, AssignmentDesign::bernoulli(0.5), z);
  EXPECT_EQ(t.mode(), GpsMode::product_form);
  EXPECT_DOUBLE_EQ(gps_at(t, 0, 0.3), 0.25);
  // Tied weights fall back to the exact law: E = 1/2 has two routes.
  EXPECT_DOUBLE_EQ(gps_at(t, 1, 0.5), 0.5);
}

TEST(Balancing, ExactScoresBalance) {
  auto g = small_uniform(12, 200, 40);
  auto design = AssignmentDesign::bernoulli(0.5);
  auto table = exact_gps_table(g, design);
  Rng rng = substream(99);
  for (double level : {0.0, 1.0}) {
    auto groups = balancing_check(g, design, table, level, 4000, rng);
    ASSERT_FALSE(groups.empty());
    std::size_t failed = 0;
    for (const auto& row : groups) failed += row.ok ? 0 : 1;
    EXPECT_LE(failed, 1u) << "level " << level;
  }
}

TEST(Balancing, WrongScoresAreCaught) {
  auto g = fixture::simple_graph(50, 50);
  auto table = exact_gps_table(g, AssignmentDesign::bernoulli(0.5));
  Rng rng = substream(5);
  // Assignments drawn at p = 0.7 do not match scores computed at p = 0.5.
  auto groups = balancing_check(g, AssignmentDesign::bernoulli(0.7), table, 1.0, 2000, rng);
  for (const auto& row : groups) EXPECT_FALSE(row.ok);
}
