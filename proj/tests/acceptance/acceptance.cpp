// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Seeds are fixed here and were chosen before the first run.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>

#include "bipgps/bipgps.hpp"

using namespace bipgps;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

bool in(double v, double lo, double hi) { return v >= lo && v <= hi; }

EstimatorSpec spec_of(EstimatorKind k) {
  EstimatorSpec s;
  s.kind = k;
  return s;
}

GraphSpec uniform_graph() {
  GraphSpec g;
  g.kind = GraphKind::uniform_degree;
  g.n_outcome = 1000;
  g.m_diversion = 100;
  g.deg_min = 1;
  g.deg_max = 10;
  return g;
}

const MethodResult& method(const SimStudyResult& r, const std::string& name) {
  for (const auto& m : r.methods)
    if (m.name == name) return m;
  throw std::runtime_error("no method " + name);
}

std::string failures_of(const SimStudyResult& r) {
  std::string s;
  for (const auto& m : r.methods)
    if (m.failures > 0) s += " [" + m.name + " failed " + std::to_string(m.failures) + "x]";
  return s;
}

// 1. Simple example averaged over assignments.
Outcome simple_example() {
  const std::size_t n_s = 2000, n_d = 2000;
  std::vector<std::vector<Edge>> rows;
  std::size_t j = 0;
  for (std::size_t i = 0; i < n_s; ++i) rows.push_back({{j++, 1.0}});
  for (std::size_t i = 0; i < n_d; ++i) {
    rows.push_back({{j, 0.5}, {j + 1, 0.5}});
    j += 2;
  }
  auto graph = std::make_shared<const BipartiteGraph>(n_s + n_d, j, rows, true);
  auto design = AssignmentDesign::bernoulli(0.5);
  auto gps = std::make_shared<const GpsTable>(exact_gps_table(*graph, design));
  std::vector<std::size_t> all(graph->n_outcome());
  std::iota(all.begin(), all.end(), 0);
  Population pop(graph, gps, all);
  const auto& scores = pop.scores({0.0, 1.0});

  const int draws = 5000;
  double s_mean = 0, s_ols = 0, s_ht = 0, s_gps = 0;
  Rng rng = substream(20240719);
  for (int t = 0; t < draws; ++t) {
    auto e = linear_exposure(*graph, draw_assignment(design, graph->m_diversion(), rng)).e;
    std::vector<double> y(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) y[i] = i < n_s ? 0.0 : e[i];
    auto d = make_dataset(graph, gps, y, e);
    s_mean += naive_mean(d, 1.0);
    s_ols += naive_ols(d);
    s_ht += ht_estimate(d, 1.0).value;
    s_gps += ate(dose_response(beta_cell_means(d), scores));
  }
  double m = s_mean / draws, o = s_ols / draws, h = s_ht / draws, g = s_gps / draws;
  return {in(m, 0.31, 0.36) && in(o, 0.31, 0.36) && in(h, 0.47, 0.53) && in(g, 0.47, 0.53),
          "naive_mean(1)=" + num(m) + " naive_ols=" + num(o) + " ht(1)=" + num(h) + " gps_ate=" + num(g)};
}

StudyConfig study_config(EffectForm effect, std::uint64_t seed) {
  StudyConfig c;
  c.dgp.graph = uniform_graph();
  c.dgp.effect = effect;
  c.dgp.sigma2_eps = 0.5;
  c.dgp.sigma2_gamma = 0.0;
  c.n_sims = 100;
  c.boot.B = 200;
  c.seed = seed;
  return c;
}

// 2. Homogeneous-effect study.
Outcome homogeneous_study() {
  auto c = study_config(EffectForm::homogeneous, 20240715);
  c.methods = {{"naive", spec_of(EstimatorKind::naive_ols), IntervalMethod::naive_bootstrap},
               {"krr", spec_of(EstimatorKind::gps_krr), IntervalMethod::naive_bootstrap}};
  auto r = run_study(c);
  const auto& nv = method(r, "naive");
  const auto& kr = method(r, "krr");
  bool pass = std::abs(nv.bias) <= 0.015 && in(nv.rmse, 0.02, 0.04) && in(nv.coverage, 0.90, 0.99) &&
              std::abs(kr.bias) <= std::abs(nv.bias) + 0.01 && in(kr.coverage, 0.88, 0.99);
  return {pass, "naive bias=" + num(nv.bias) + " rmse=" + num(nv.rmse) + " coverage=" + num(nv.coverage, 2) +
                    "; krr bias=" + num(kr.bias) + " rmse=" + num(kr.rmse) + " coverage=" + num(kr.coverage, 2) +
                    failures_of(r)};
}

// 3. Heterogeneous-effect study.
Outcome heterogeneous_study() {
  auto c = study_config(EffectForm::heterogeneous, 20240716);
  c.methods = {{"naive", spec_of(EstimatorKind::naive_ols), IntervalMethod::naive_bootstrap},
               {"correct", spec_of(EstimatorKind::degree_ols), IntervalMethod::naive_bootstrap},
               {"krr", spec_of(EstimatorKind::gps_krr), IntervalMethod::naive_bootstrap}};
  auto r = run_study(c);
  const auto& nv = method(r, "naive");
  const auto& cs = method(r, "correct");
  const auto& kr = method(r, "krr");
  // Bias is estimate minus truth; the naive slope sits below the truth, so
  // the magnitude is what is compared.
  bool pass = in(std::abs(nv.bias), 2.0, 2.8) && nv.coverage <= 0.05 && std::abs(cs.bias) <= 0.02 &&
              in(cs.coverage, 0.90, 0.99) && std::abs(kr.bias) <= 0.5 * std::abs(nv.bias);
  return {pass, "naive bias=" + num(nv.bias) + " coverage=" + num(nv.coverage, 2) + "; correct bias=" +
                    num(cs.bias) + " coverage=" + num(cs.coverage, 2) + "; krr bias=" + num(kr.bias) +
                    failures_of(r)};
}

// 4. Correlated errors: parametric versus naive bootstrap.
Outcome correlated_coverage() {
  StudyConfig c;
  c.dgp.graph = uniform_graph();
  c.dgp.sigma2_eps = 0.5;
  c.dgp.sigma2_gamma = 0.5;
  c.n_sims = 100;
  c.boot.B = 200;
  c.seed = 20240717;
  c.methods = {{"naive", spec_of(EstimatorKind::naive_ols), IntervalMethod::naive_bootstrap},
               {"parametric", spec_of(EstimatorKind::naive_ols), IntervalMethod::parametric_bootstrap}};
  auto r = run_study(c);
  const auto& nv = method(r, "naive");
  const auto& pb = method(r, "parametric");
  return {pb.coverage >= 0.90 && nv.coverage <= 0.85,
          "parametric coverage=" + num(pb.coverage, 2) + " naive coverage=" + num(nv.coverage, 2) +
              failures_of(r)};
}

struct FixedDesign {
  DesignMatrix phi;
  Eigen::MatrixXd w;
};

FixedDesign fixed_design(std::uint64_t seed) {
  Rng rng = substream(seed, {0});
  auto g = synth_graph(uniform_graph(), rng);
  Rng zr = substream(seed, {1});
  auto e = linear_exposure(g, draw_assignment(AssignmentDesign::bernoulli(0.5), g.m_diversion(), zr));
  std::vector<std::size_t> all(g.n_outcome());
  std::iota(all.begin(), all.end(), 0);
  FixedDesign f{{Eigen::MatrixXd(1000, 2), {"1", "E"}}, dense_weights(g, all)};
  for (Eigen::Index i = 0; i < 1000; ++i) f.phi.x.row(i) << 1.0, e[static_cast<std::size_t>(i)];
  return f;
}

// 5. Limit covariance of sqrt(N)(beta_hat - beta) against simulation.
Outcome covariance_formula() {
  auto f = fixed_design(20240720);
  const double n = static_cast<double>(f.phi.rows());
  Eigen::Vector2d beta(0.0, 5.5);
  LeastSquares ls(f.phi);
  Rng rng = substream(20240720, {2});
  std::normal_distribution<double> z(0.0, 1.0);
  const int reps = 2000;
  Eigen::MatrixXd draws(reps, 2);
  const double s = std::sqrt(0.5);
  for (int r = 0; r < reps; ++r) {
    Eigen::VectorXd gamma(f.w.cols()), eps(f.phi.rows());
    for (Eigen::Index j = 0; j < gamma.size(); ++j) gamma[j] = s * z(rng);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = s * z(rng);
    Eigen::VectorXd y = f.phi.x * beta + f.w * gamma + eps;
    draws.row(r) = (std::sqrt(n) * (ls.solve(y) - beta)).transpose();
  }
  Eigen::RowVectorXd mean = draws.colwise().mean();
  Eigen::MatrixXd centered = draws.rowwise() - mean;
  Eigen::MatrixXd emp = centered.transpose() * centered / (reps - 1.0);
  auto theory = correlated_error_variance(f.phi, f.w, 0.5, 0.5);
  double r0 = emp(0, 0) / theory(0, 0), r1 = emp(1, 1) / theory(1, 1);
  return {std::abs(r0 - 1.0) <= 0.15 && std::abs(r1 - 1.0) <= 0.15,
          "empirical/theory diag: " + num(r0, 3) + ", " + num(r1, 3) + " (theory " + num(theory(0, 0), 3) + ", " +
              num(theory(1, 1), 3) + ")"};
}

// 6. Error variance recovery.
Outcome sigma_recovery() {
  Rng gr = substream(20240721, {0});
  auto g = synth_graph(uniform_graph(), gr);
  std::vector<std::size_t> all(g.n_outcome());
  std::iota(all.begin(), all.end(), 0);
  auto w = dense_weights(g, all);
  DgpSpec dgp;
  dgp.sigma2_eps = 0.5;
  dgp.sigma2_gamma = 0.5;
  const int reps = 100;
  double se = 0, sg = 0;
  int clipped = 0;
  for (int r = 0; r < reps; ++r) {
    Rng zr = substream(20240721, {1, static_cast<std::uint64_t>(r)});
    auto e = linear_exposure(g, draw_assignment(dgp.design, g.m_diversion(), zr));
    Rng yr = substream(20240721, {2, static_cast<std::uint64_t>(r)});
    auto y = generate_outcomes(dgp, g, e, yr);
    DesignMatrix phi{Eigen::MatrixXd(1000, 2), {"1", "E"}};
    for (Eigen::Index i = 0; i < 1000; ++i) phi.x.row(i) << 1.0, e[static_cast<std::size_t>(i)];
    auto est = estimate_sigmas(Eigen::Map<const Eigen::VectorXd>(y.data(), 1000), phi, w);
    se += est.sigma2_eps;
    sg += est.sigma2_gamma;
    clipped += est.clipped ? 1 : 0;
  }
  se /= reps;
  sg /= reps;
  return {in(se, 0.45, 0.55) && in(sg, 0.4, 0.6), "mean sigma2_eps=" + num(se) + " mean sigma2_gamma=" + num(sg) +
                                                      " clipped=" + std::to_string(clipped)};
}

// 7. GPS properties on a degree <= 10 graph.
Outcome gps_properties() {
  Rng gr = substream(20240722, {0});
  auto g = synth_graph(uniform_graph(), gr);
  auto design = AssignmentDesign::bernoulli(0.5);
  auto exact = exact_gps_table(g, design);
  double worst_total = 0;
  for (std::size_t i = 0; i < g.n_outcome(); ++i)
    worst_total = std::max(worst_total, std::abs(exact.distribution(i).total() - 1.0));

  Rng mr = substream(20240722, {1});
  auto mc = mc_gps(g, design, Bucketing::atoms(), 100000, mr);
  double worst_atom = 0;
  for (std::size_t i = 0; i < g.n_outcome(); ++i) {
    const auto& ex = exact.distribution(i);
    for (std::size_t k = 0; k < ex.level.size(); ++k)
      worst_atom = std::max(worst_atom, std::abs(mc.probability(i, ex.level[k]) - ex.prob[k]));
    // Simulated atoms outside the exact support would also be a mismatch.
    const auto& sim = mc.distribution(i);
    for (std::size_t k = 0; k < sim.level.size(); ++k)
      if (exact.probability(i, sim.level[k]) == 0.0) worst_atom = std::max(worst_atom, sim.prob[k]);
  }

  Rng br = substream(20240722, {2});
  auto groups = balancing_check(g, design, exact, 1.0, 10000, br, 3.0);
  std::size_t bad = 0;
  for (const auto& row : groups) bad += row.ok ? 0 : 1;
  return {worst_total <= 1e-12 && worst_atom <= 0.01 && bad == 0,
          "max |sum-1|=" + num(worst_total, 15) + " max atom error=" + num(worst_atom, 5) + " balancing groups " +
              std::to_string(groups.size() - bad) + "/" + std::to_string(groups.size()) + " inside 3 SE"};
}

// 8. Edges-cut sweep.
Outcome edges_cut() {
  SweepConfig c;
  c.graph = uniform_graph();
  c.graph.kind = GraphKind::blocks;
  c.graph.blocks = 10;
  c.shares = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  c.sigma2_eps = 0.5;
  c.sigma2_gamma = 0.5;
  c.n_sims = 200;
  c.boot.B = 200;
  c.seed = 20240718;
  auto r = edges_cut_sweep(c);
  std::vector<double> share, cover;
  std::ostringstream detail;
  for (const auto& row : r.rows) {
    share.push_back(row.share);
    cover.push_back(row.block_coverage);
    detail << " [" << num(row.share, 1) << ": clustered " << num(row.block_coverage, 3) << " naive "
           << num(row.naive_coverage, 3) << "]";
  }
  double rho = spearman(share, cover);
  double gap = r.rows[0].block_coverage - r.rows[0].naive_coverage;
  return {gap >= 0.05 && rho < 0.0, "gap at 0%=" + num(gap, 3) + " spearman=" + num(rho, 3) + detail.str()};
}

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "simple-example oracle", 30, simple_example},
      {2, "homogeneous study", 15 * 60, homogeneous_study},
      {3, "heterogeneous study", 20 * 60, heterogeneous_study},
      {4, "correlated errors coverage", 20 * 60, correlated_coverage},
      {5, "limit covariance formula", 5 * 60, covariance_formula},
      {6, "error variance recovery", 5 * 60, sigma_recovery},
      {7, "gps property suite", 2 * 60, gps_properties},
      {8, "edges-cut sweep", 20 * 60, edges_cut},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool in_time = secs <= c.budget_seconds;
    bool pass = o.pass && in_time;
    failed += pass ? 0 : 1;
    std::cout << (pass ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.title << "): " << o.detail
              << " | " << num(secs, 1) << "s of " << num(c.budget_seconds, 0) << "s" << (in_time ? "" : " OVER BUDGET")
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
