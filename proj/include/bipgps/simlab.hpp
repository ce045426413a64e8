#pragma once

#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "bipgps/csv.hpp"
#include "bipgps/design.hpp"
#include "bipgps/error.hpp"
#include "bipgps/estimators.hpp"
#include "bipgps/gps.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/inference.hpp"
#include "bipgps/parallel.hpp"
#include "bipgps/rng.hpp"

namespace bipgps {

// ---------------------------------------------------------------------------
// GPS construction settings shared by the CLI and the simulations

struct GpsSettings {
  GpsMode mode = GpsMode::exact;
  std::size_t bins = kDefaultBins;  // monte-carlo only; 0 keeps atoms
  std::size_t draws = kDefaultDraws;

  void validate() const {
    if (mode == GpsMode::monte_carlo && draws < 1) throw ConfigError("gps: draws must be at least 1");
  }
};

/// Table for a graph/design pair. Product form needs the observed assignment.
inline GpsTable build_gps(const BipartiteGraph& graph, const AssignmentDesign& design, const GpsSettings& s,
                          std::uint64_t seed, const Assignment* observed = nullptr) {
  s.validate();
  switch (s.mode) {
    case GpsMode::exact: return exact_gps_table(graph, design);
    case GpsMode::monte_carlo: {
      Rng rng = substream(seed, {0x6770});
      double hi = std::max(graph.max_row_sum(), 1.0);
      auto b = s.bins == 0 ? Bucketing::atoms() : Bucketing::equal_width(s.bins, 0.0, hi);
      return mc_gps(graph, design, b, s.draws, rng);
    }
    case GpsMode::product_form:
      if (!observed) throw ConfigError("product-form GPS needs the observed assignment");
      return product_form_table(graph, design, *observed);
  }
  throw ConfigError("gps: unknown mode");
}

// ---------------------------------------------------------------------------
// Data generating process

enum class EffectForm { homogeneous, heterogeneous };

inline const char* to_string(EffectForm f) { return f == EffectForm::homogeneous ? "homogeneous" : "heterogeneous"; }

struct DgpSpec {
  GraphSpec graph;
  std::shared_ptr<const BipartiteGraph> fixed_graph;  // used instead of `graph` when set
  std::vector<std::size_t> component_labels;          // per outcome unit; optional
  AssignmentDesign design = AssignmentDesign::bernoulli(0.5);
  EffectForm effect = EffectForm::homogeneous;
  double sigma2_eps = 0.5;
  double sigma2_gamma = 0.0;
  bool redraw_graph = false;
  GpsSettings gps;

  void validate() const {
    if (!(sigma2_eps >= 0.0) || !(sigma2_gamma >= 0.0)) throw ConfigError("dgp: variances must be nonnegative");
    if (!fixed_graph) graph.validate();
    if (fixed_graph && redraw_graph) throw ConfigError("dgp: a fixed graph cannot be redrawn");
    gps.validate();
  }
};

/// C = N^-1 sum_i m_i over all outcome units.
inline double homogeneous_effect(const BipartiteGraph& g) {
  std::vector<double> m(g.n_outcome());
  for (std::size_t i = 0; i < g.n_outcome(); ++i) m[i] = static_cast<double>(g.degree(i));
  return stable_mean(m);
}

/// Y_i = mu_i(E_i) + sum_j W_ij gamma_j + eps_i. gamma is drawn before eps.
inline std::vector<double> generate_outcomes(const DgpSpec& dgp, const BipartiteGraph& g, const ExposureProfile& e,
                                             Rng& rng) {
  if (e.size() != g.n_outcome()) throw DataError("generate_outcomes: exposure length mismatch");
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> gamma(g.m_diversion(), 0.0);
  const double sg = std::sqrt(dgp.sigma2_gamma), se = std::sqrt(dgp.sigma2_eps);
  for (auto& v : gamma) v = sg * z(rng);
  const double c = homogeneous_effect(g);
  std::vector<double> y(g.n_outcome());
  for (std::size_t i = 0; i < g.n_outcome(); ++i) {
    double slope = dgp.effect == EffectForm::homogeneous ? c : static_cast<double>(g.degree(i));
    double v = slope * e[i];
    for (const Edge& ed : g.row(i)) v += ed.weight * gamma[ed.diversion];
    y[i] = v + se * z(rng);
  }
  return y;
}

/// True ATE over the estimation population (units with at least one edge).
inline double true_ate(const DgpSpec& dgp, const BipartiteGraph& g, std::span<const std::size_t> units) {
  return dgp.effect == EffectForm::homogeneous ? homogeneous_effect(g) : mean_degree(g, units);
}

/// Connected-component label of every outcome unit.
inline std::vector<std::size_t> component_labels(const BipartiteGraph& g) {
  detail::UnionFind uf(g.n_outcome() + g.m_diversion());
  for (std::size_t i = 0; i < g.n_outcome(); ++i)
    for (const Edge& e : g.row(i)) uf.unite(i, g.n_outcome() + e.diversion);
  std::vector<std::size_t> label(g.n_outcome());
  for (std::size_t i = 0; i < g.n_outcome(); ++i) label[i] = uf.find(i);
  return label;
}

// ---------------------------------------------------------------------------
// Study runner

enum class IntervalMethod { none, naive_bootstrap, block_bootstrap, parametric_bootstrap, ols_asymptotic };

inline const char* to_string(IntervalMethod m) {
  switch (m) {
    case IntervalMethod::none: return "none";
    case IntervalMethod::naive_bootstrap: return "naive-bootstrap";
    case IntervalMethod::block_bootstrap: return "block-bootstrap";
    case IntervalMethod::parametric_bootstrap: return "parametric-bootstrap";
    case IntervalMethod::ols_asymptotic: return "ols-asymptotic";
  }
  return "?";
}

inline IntervalMethod parse_interval_method(const std::string& s) {
  for (auto m : {IntervalMethod::none, IntervalMethod::naive_bootstrap, IntervalMethod::block_bootstrap,
                 IntervalMethod::parametric_bootstrap, IntervalMethod::ols_asymptotic})
    if (s == to_string(m)) return m;
  throw ConfigError("unknown interval method '" + s + "'");
}

struct MethodSpec {
  std::string name;
  EstimatorSpec estimator;
  IntervalMethod interval = IntervalMethod::naive_bootstrap;

  void validate() const {
    bool regression = estimator.kind == EstimatorKind::naive_ols || estimator.kind == EstimatorKind::degree_ols;
    if ((interval == IntervalMethod::parametric_bootstrap || interval == IntervalMethod::ols_asymptotic) &&
        !regression) {
      throw ConfigError("method '" + name + "': " + to_string(interval) +
                        " intervals need a regression estimator (naive_ols or degree_ols)");
    }
  }
};

struct StudyConfig {
  DgpSpec dgp;
  std::vector<MethodSpec> methods;
  std::size_t n_sims = 100;
  BootstrapOptions boot;  // B, level, type; its seed is ignored (derived per replicate)
  SigmaMethod sigma_method = SigmaMethod::finite_sample;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(std::size_t done, std::size_t total)> progress;

  void validate() const {
    dgp.validate();
    if (n_sims < 1) throw ConfigError("study: n_sims must be at least 1");
    if (methods.empty()) throw ConfigError("study: no methods configured");
    for (const auto& m : methods) {
      m.validate();
      if (m.interval == IntervalMethod::naive_bootstrap) boot.validate(50);
      if (m.interval == IntervalMethod::block_bootstrap || m.interval == IntervalMethod::parametric_bootstrap)
        boot.validate(1);
    }
    if (workers < 1) throw ConfigError("study: workers must be at least 1");
  }
};

struct SimRecord {
  bool ok = false;
  double estimate = 0.0;
  std::optional<IntervalEstimate> interval;
  std::string error;
};

struct MethodResult {
  std::string name;
  std::string estimator;
  std::string interval;
  std::size_t n_ok = 0;
  std::size_t failures = 0;
  double bias = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();  // NaN without intervals
  double mean_width = std::numeric_limits<double>::quiet_NaN();
  std::vector<SimRecord> records;  // one per completed simulation
  std::map<std::string, std::size_t> failure_census;
};

struct SimStudyResult {
  std::vector<MethodResult> methods;
  std::vector<double> truth;  // per completed simulation
  std::size_t n_sims_requested = 0;
  std::size_t n_sims = 0;  // completed
  std::size_t B = 0;
  double level = 0.95;
  std::uint64_t seed = 0;
  bool partial = false;
};

namespace detail {

inline Rng graph_stream(std::uint64_t seed, bool redraw, std::size_t sim) {
  return redraw ? substream(seed, {0, sim}) : substream(seed, {0});
}

struct SimContext {
  std::shared_ptr<const BipartiteGraph> graph;
  std::shared_ptr<const GpsTable> gps;  // null for product form (assignment dependent)
  std::vector<std::size_t> labels;      // per outcome unit
};

inline DesignMatrix regression_design(const Dataset& d, EstimatorKind kind) {
  const auto n = static_cast<Eigen::Index>(d.size());
  bool scaled = kind == EstimatorKind::degree_ols;
  DesignMatrix x{Eigen::MatrixXd(n, 2), {"1", scaled ? "m*E" : "E"}};
  for (Eigen::Index k = 0; k < n; ++k) {
    auto u = static_cast<std::size_t>(k);
    x.x.row(k) << 1.0, (scaled ? d.degree(u) : 1.0) * d.e[u];
  }
  return x;
}

inline SimRecord run_method(const StudyConfig& cfg, const MethodSpec& m, const Dataset& d, const Population& pop,
                            std::span<const std::size_t> row_labels, std::uint64_t seed) {
  SimRecord rec;
  try {
    BootstrapOptions opt = cfg.boot;
    opt.seed = seed;
    opt.workers = 1;
    double scale = m.estimator.kind == EstimatorKind::degree_ols ? pop.mean_degree() : 1.0;
    switch (m.interval) {
      case IntervalMethod::none: rec.estimate = estimate_ate(m.estimator, d, pop).value; break;
      case IntervalMethod::naive_bootstrap:
        rec.interval = naive_bootstrap(d, m.estimator, opt, pop);
        rec.estimate = rec.interval->point;
        break;
      case IntervalMethod::block_bootstrap:
        rec.interval = block_bootstrap(d, row_labels, m.estimator, opt, pop);
        rec.estimate = rec.interval->point;
        break;
      case IntervalMethod::parametric_bootstrap:
      case IntervalMethod::ols_asymptotic: {
        auto phi = regression_design(d, m.estimator.kind);
        Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(d.y.data(), static_cast<Eigen::Index>(d.size()));
        IntervalEstimate iv;
        if (m.interval == IntervalMethod::parametric_bootstrap) {
          auto w = dense_weights(*d.graph, d.unit);
          iv = parametric_bootstrap(y, phi, w, opt, cfg.sigma_method).intervals[1];
        } else {
          iv = ols_asymptotic_interval(ols(phi, y), 1, opt.level);
        }
        iv.point *= scale;
        iv.lower *= scale;
        iv.upper *= scale;
        rec.interval = iv;
        rec.estimate = iv.point;
        break;
      }
    }
    rec.ok = true;
  } catch (const Error& e) {
    rec.error = e.what();
  }
  return rec;
}

}  // namespace detail

/// Runs n_sims replications. Each simulation draws its assignment, outcomes
/// and bootstrap streams from (seed, sim index), so results do not depend on
/// the worker count. Cancelled runs keep every fully completed simulation.
inline SimStudyResult run_study(const StudyConfig& cfg) {
  cfg.validate();
  const auto& dgp = cfg.dgp;

  auto make_context = [&](std::size_t sim) {
    detail::SimContext ctx;
    if (dgp.fixed_graph) {
      ctx.graph = dgp.fixed_graph;
    } else {
      Rng rng = detail::graph_stream(cfg.seed, dgp.redraw_graph, sim);
      ctx.graph = std::make_shared<const BipartiteGraph>(synth_graph(dgp.graph, rng));
    }
    if (!dgp.component_labels.empty()) {
      if (dgp.component_labels.size() != ctx.graph->n_outcome())
        throw ConfigError("dgp: component label count does not match N");
      ctx.labels = dgp.component_labels;
    } else if (!dgp.fixed_graph && dgp.graph.kind == GraphKind::blocks) {
      ctx.labels = block_labels(dgp.graph);
    } else {
      ctx.labels = component_labels(*ctx.graph);
    }
    if (dgp.gps.mode != GpsMode::product_form) {
      std::uint64_t gseed = derive_seed(cfg.seed, {4, dgp.redraw_graph ? sim : 0});
      ctx.gps = std::make_shared<const GpsTable>(build_gps(*ctx.graph, dgp.design, dgp.gps, gseed));
    }
    return ctx;
  };

  std::optional<detail::SimContext> shared;
  if (!dgp.redraw_graph) shared = make_context(0);

  const std::size_t n_methods = cfg.methods.size();
  std::vector<std::vector<SimRecord>> records(cfg.n_sims, std::vector<SimRecord>(n_methods));
  std::vector<double> truth(cfg.n_sims, 0.0);
  std::vector<char> done(cfg.n_sims, 0);
  std::atomic<std::size_t> finished{0};
  std::mutex progress_mu;

  parallel_for(
      cfg.n_sims, cfg.workers,
      [&](std::size_t s) {
        detail::SimContext ctx = shared ? *shared : make_context(s);
        const auto& g = *ctx.graph;
        Rng arng = substream(cfg.seed, {1, s});
        auto z = draw_assignment(dgp.design, g.m_diversion(), arng);
        auto e = linear_exposure(g, z);
        Rng yrng = substream(cfg.seed, {2, s});
        auto y = generate_outcomes(dgp, g, e, yrng);
        auto gps = ctx.gps ? ctx.gps
                           : std::make_shared<const GpsTable>(build_gps(g, dgp.design, dgp.gps, 0, &z));
        auto d = make_dataset(ctx.graph, gps, y, e.e);
        Population pop = Population::of(d);
        std::vector<std::size_t> row_labels(d.size());
        for (std::size_t k = 0; k < d.size(); ++k) row_labels[k] = ctx.labels[d.unit[k]];
        truth[s] = true_ate(dgp, g, d.unit);
        for (std::size_t m = 0; m < n_methods; ++m) {
          if (cfg.cancel && cfg.cancel->load()) return;
          records[s][m] = detail::run_method(cfg, cfg.methods[m], d, pop, row_labels, derive_seed(cfg.seed, {3, s, m}));
        }
        done[s] = 1;
        std::size_t n_done = ++finished;
        if (cfg.progress) {
          std::lock_guard<std::mutex> lock(progress_mu);
          cfg.progress(n_done, cfg.n_sims);
        }
      },
      cfg.cancel);

  SimStudyResult out;
  out.n_sims_requested = cfg.n_sims;
  out.B = cfg.boot.B;
  out.level = cfg.boot.level;
  out.seed = cfg.seed;
  std::vector<std::size_t> kept;
  for (std::size_t s = 0; s < cfg.n_sims; ++s)
    if (done[s]) kept.push_back(s);
  out.n_sims = kept.size();
  out.partial = kept.size() < cfg.n_sims;
  for (std::size_t s : kept) out.truth.push_back(truth[s]);

  for (std::size_t m = 0; m < n_methods; ++m) {
    MethodResult r;
    r.name = cfg.methods[m].name;
    r.estimator = to_string(cfg.methods[m].estimator.kind);
    r.interval = to_string(cfg.methods[m].interval);
    std::vector<double> err, sq, width;
    std::size_t covered = 0, n_iv = 0;
    for (std::size_t s : kept) {
      const auto& rec = records[s][m];
      r.records.push_back(rec);
      if (!rec.ok) {
        ++r.failures;
        ++r.failure_census[rec.error];
        continue;
      }
      ++r.n_ok;
      double dev = rec.estimate - truth[s];
      err.push_back(dev);
      sq.push_back(dev * dev);
      if (rec.interval) {
        ++n_iv;
        if (rec.interval->contains(truth[s])) ++covered;
        width.push_back(rec.interval->width());
      }
    }
    if (!err.empty()) {
      r.bias = stable_mean(err);
      r.rmse = std::sqrt(stable_mean(sq));
    }
    if (n_iv > 0) {
      r.coverage = static_cast<double>(covered) / static_cast<double>(n_iv);
      r.mean_width = stable_mean(width);
    }
    out.methods.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edges-cut sweep

struct SweepConfig {
  GraphSpec graph;  // blocks kind
  std::vector<double> shares{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  EffectForm effect = EffectForm::homogeneous;
  AssignmentDesign design = AssignmentDesign::bernoulli(0.5);
  double sigma2_eps = 0.5;
  double sigma2_gamma = 0.5;
  EstimatorSpec estimator;  // naive_ols by default
  std::size_t n_sims = 100;
  BootstrapOptions boot;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  const std::atomic<bool>* cancel = nullptr;
  std::function<void(std::size_t share_index, std::size_t done, std::size_t total)> progress;

  void validate() const {
    if (graph.kind != GraphKind::blocks) throw ConfigError("sweep: the graph spec must be of blocks kind");
    if (shares.empty()) throw ConfigError("sweep: no cut shares");
    for (double s : shares)
      if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("sweep: cut shares must lie in [0,1]");
  }
};

struct SweepRow {
  double share = 0.0;
  double realized_share = 0.0;
  double naive_coverage = 0.0;
  double block_coverage = 0.0;
  double bias = 0.0;
  std::size_t n_sims = 0;
  std::size_t failures = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  bool partial = false;
};

/// Clustered versus naive bootstrap coverage as cross-block edges are added.
/// Every share starts from the same block draw and reuses the simulation
/// streams, so differences between shares come from the rewiring.
inline SweepResult edges_cut_sweep(const SweepConfig& cfg) {
  cfg.validate();
  SweepResult out;
  auto div_block = block_partition(cfg.graph.m_diversion, cfg.graph.blocks);
  for (std::size_t k = 0; k < cfg.shares.size(); ++k) {
    if (cfg.cancel && cfg.cancel->load()) {
      out.partial = true;
      break;
    }
    GraphSpec gs = cfg.graph;
    gs.cross_share = cfg.shares[k];
    Rng grng = substream(cfg.seed, {0});
    auto graph = std::make_shared<const BipartiteGraph>(synth_graph(gs, grng));

    StudyConfig sc;
    sc.dgp.graph = gs;
    sc.dgp.fixed_graph = graph;
    sc.dgp.component_labels = block_labels(gs);
    sc.dgp.design = cfg.design;
    sc.dgp.effect = cfg.effect;
    sc.dgp.sigma2_eps = cfg.sigma2_eps;
    sc.dgp.sigma2_gamma = cfg.sigma2_gamma;
    sc.methods = {{"naive bootstrap", cfg.estimator, IntervalMethod::naive_bootstrap},
                  {"clustered bootstrap", cfg.estimator, IntervalMethod::block_bootstrap}};
    sc.n_sims = cfg.n_sims;
    sc.boot = cfg.boot;
    sc.seed = derive_seed(cfg.seed, {1});
    sc.workers = cfg.workers;
    sc.cancel = cfg.cancel;
    if (cfg.progress) sc.progress = [&, k](std::size_t d, std::size_t t) { cfg.progress(k, d, t); };
    auto res = run_study(sc);

    SweepRow row;
    row.share = cfg.shares[k];
    row.realized_share = cut_share(*graph, sc.dgp.component_labels, div_block);
    row.naive_coverage = res.methods[0].coverage;
    row.block_coverage = res.methods[1].coverage;
    row.bias = res.methods[0].bias;
    row.n_sims = res.n_sims;
    row.failures = res.methods[0].failures + res.methods[1].failures;
    out.rows.push_back(row);
    if (res.partial) {
      out.partial = true;
      break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tables

inline std::string fmt(double v) { return std::isnan(v) ? std::string("NA") : csv::format_double(v); }

/// One row per method with bias, RMSE and coverage.
inline void write_study_csv(std::ostream& out, const SimStudyResult& r) {
  out << "method,estimator,interval,n_sims,failures,bias,rmse,coverage,mean_width,B,level,seed\n";
  for (const auto& m : r.methods) {
    out << csv::quote(m.name) << ',' << m.estimator << ',' << m.interval << ',' << m.n_ok << ',' << m.failures
        << ',' << fmt(m.bias) << ',' << fmt(m.rmse) << ',' << fmt(m.coverage) << ',' << fmt(m.mean_width) << ','
        << r.B << ',' << fmt(r.level) << ',' << r.seed << '\n';
  }
}

/// Metrics as rows and methods as columns, one column per method.
inline void write_table_layout_csv(std::ostream& out, const SimStudyResult& r) {
  out << "metric";
  for (const auto& m : r.methods) out << ',' << csv::quote(m.name);
  out << '\n';
  auto line = [&](const char* name, auto get) {
    out << name;
    for (const auto& m : r.methods) out << ',' << fmt(get(m));
    out << '\n';
  };
  line("Bias", [](const MethodResult& m) { return m.bias; });
  line("RMSE", [](const MethodResult& m) { return m.rmse; });
  line("Coverage", [](const MethodResult& m) { return m.coverage; });
}

/// Per-simulation estimates and intervals.
inline void write_replicates_csv(std::ostream& out, const SimStudyResult& r) {
  out << "sim,method,truth,estimate,lower,upper,covered,error\n";
  for (const auto& m : r.methods) {
    for (std::size_t s = 0; s < m.records.size(); ++s) {
      const auto& rec = m.records[s];
      out << s << ',' << csv::quote(m.name) << ',' << fmt(r.truth[s]) << ',';
      if (!rec.ok) {
        out << "NA,NA,NA,NA," << csv::quote(rec.error) << '\n';
        continue;
      }
      out << fmt(rec.estimate) << ',';
      if (rec.interval) {
        out << fmt(rec.interval->lower) << ',' << fmt(rec.interval->upper) << ','
            << (rec.interval->contains(r.truth[s]) ? 1 : 0);
      } else {
        out << "NA,NA,NA";
      }
      out << ",\n";
    }
  }
}

inline void write_sweep_csv(std::ostream& out, const SweepResult& r) {
  out << "cut_share,realized_cut_share,naive_coverage,clustered_coverage,naive_bias,n_sims,failures\n";
  for (const auto& row : r.rows) {
    out << fmt(row.share) << ',' << fmt(row.realized_share) << ',' << fmt(row.naive_coverage) << ','
        << fmt(row.block_coverage) << ',' << fmt(row.bias) << ',' << row.n_sims << ',' << row.failures << '\n';
  }
}

}  // namespace bipgps
