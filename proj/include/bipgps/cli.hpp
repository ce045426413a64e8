#pragma once

// Batch front end: structured JSON configs, command implementations and
// machine-readable error reporting. main() lives in tools/bipgps.cpp.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "bipgps/bipgps.hpp"

namespace bipgps::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

inline constexpr const char* kVersion = "0.1.0";

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir = "out";
  std::string format = "csv";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  bool quiet = false;
};

/// Set from the SIGINT handler; long commands poll it and flush partial results.
inline std::atomic<bool>& interrupted() {
  static std::atomic<bool> flag{false};
  return flag;
}

// ---------------------------------------------------------------------------
// Strict JSON access

inline void require_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) {
      std::string list;
      for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
      throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
    }
  }
}

template <class T>
T get_or(const json& j, const char* key, T fallback, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!j.at(key).is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (j.at(key).is_number_integer() && j.at(key).template get<long long>() < 0)
        throw ConfigError(where + "." + key + ": must be nonnegative");
      if (!j.at(key).is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
    }
    if constexpr (std::is_same_v<T, double>) {
      if (!j.at(key).is_number()) throw ConfigError(where + "." + key + ": expected a number");
    }
    return j.at(key).template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

template <class T>
T need(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw ConfigError(where + ": missing required key '" + key + "'");
  return get_or<T>(j, key, T{}, where);
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

inline std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream in(path);
  if (!in) throw DataError(std::string("cannot open ") + what + " file '" + path + "'");
  return in;
}

// ---------------------------------------------------------------------------
// Section parsers

inline GraphSpec parse_graph(const json& j, const fs::path& base) {
  const std::string w = "graph";
  require_keys(j, {"kind", "n_outcome", "m_diversion", "deg_min", "deg_max", "blocks", "cross_share", "path", "normalize"},
               w);
  GraphSpec s;
  auto kind = get_or<std::string>(j, "kind", "uniform-degree", w);
  if (kind == "uniform-degree") {
    s.kind = GraphKind::uniform_degree;
  } else if (kind == "blocks") {
    s.kind = GraphKind::blocks;
  } else if (kind == "external-file") {
    s.kind = GraphKind::external_file;
  } else {
    throw ConfigError("graph.kind: expected uniform-degree, blocks or external-file, got '" + kind + "'");
  }
  s.n_outcome = get_or<std::size_t>(j, "n_outcome", s.n_outcome, w);
  s.m_diversion = get_or<std::size_t>(j, "m_diversion", s.m_diversion, w);
  s.deg_min = get_or<std::size_t>(j, "deg_min", s.deg_min, w);
  s.deg_max = get_or<std::size_t>(j, "deg_max", s.deg_max, w);
  s.blocks = get_or<std::size_t>(j, "blocks", s.blocks, w);
  s.cross_share = get_or<double>(j, "cross_share", s.cross_share, w);
  s.normalize = get_or<bool>(j, "normalize", s.normalize, w);
  if (j.contains("path")) s.path = resolve(base, need<std::string>(j, "path", w));
  s.validate();
  return s;
}

/// Graph from a spec: synthesized from the seed, or loaded from its file.
inline LoadedGraph materialize_graph(const GraphSpec& s, std::uint64_t seed) {
  if (s.kind == GraphKind::external_file) {
    auto in = open_input(s.path, "edge-list");
    return load_edge_list(in, s.normalize);
  }
  Rng rng = substream(seed, {0});
  auto g = synth_graph(s, rng);
  auto ids = default_ids(g);
  return {std::move(g), std::move(ids)};
}

inline AssignmentDesign parse_design(const json& j, const fs::path& base, const IdMap* ids, std::size_t m) {
  const std::string w = "design";
  require_keys(j, {"kind", "p", "p_vec", "probabilities", "k"}, w);
  auto kind = get_or<std::string>(j, "kind", "bernoulli", w);
  AssignmentDesign d;
  if (kind == "bernoulli") {
    d = AssignmentDesign::bernoulli(get_or<double>(j, "p", 0.5, w));
  } else if (kind == "bernoulli-heterogeneous") {
    if (j.contains("probabilities")) {
      if (!ids) throw ConfigError("design.probabilities needs a graph with diversion ids");
      auto in = open_input(resolve(base, need<std::string>(j, "probabilities", w)), "probability");
      d = AssignmentDesign::heterogeneous(load_probability_file(in, ids->diversion));
    } else {
      d = AssignmentDesign::heterogeneous(need<std::vector<double>>(j, "p_vec", w));
    }
  } else if (kind == "completely-randomized") {
    d = AssignmentDesign::completely_randomized(need<std::size_t>(j, "k", w));
  } else {
    throw ConfigError("design.kind: expected bernoulli, bernoulli-heterogeneous or completely-randomized");
  }
  if (m > 0) d.validate(m);
  return d;
}

inline GpsSettings parse_gps(const json& j) {
  const std::string w = "gps";
  require_keys(j, {"mode", "bins", "draws"}, w);
  GpsSettings s;
  auto mode = get_or<std::string>(j, "mode", "exact", w);
  if (mode == "exact") {
    s.mode = GpsMode::exact;
  } else if (mode == "monte-carlo") {
    s.mode = GpsMode::monte_carlo;
  } else if (mode == "product-form") {
    s.mode = GpsMode::product_form;
  } else {
    throw ConfigError("gps.mode: expected exact, monte-carlo or product-form");
  }
  s.bins = get_or<std::size_t>(j, "bins", s.bins, w);
  s.draws = get_or<std::size_t>(j, "draws", s.draws, w);
  s.validate();
  return s;
}

inline EstimatorSpec parse_estimator(const json& j) {
  EstimatorSpec s;
  if (j.is_string()) {
    s.kind = bipgps::parse_estimator(j.get<std::string>());
    return s;
  }
  const std::string w = "estimator";
  require_keys(j, {"kind", "krr", "strata", "smooth", "grid", "score_bins"}, w);
  s.kind = bipgps::parse_estimator(need<std::string>(j, "kind", w));
  if (j.contains("krr")) {
    const auto& k = j.at("krr");
    require_keys(k, {"bandwidth", "lambda", "trend"}, "estimator.krr");
    if (k.contains("bandwidth")) s.krr.bandwidth = need<double>(k, "bandwidth", "estimator.krr");
    s.krr.lambda = get_or<double>(k, "lambda", s.krr.lambda, "estimator.krr");
    auto trend = get_or<std::string>(k, "trend", "linear", "estimator.krr");
    if (trend != "linear" && trend != "none") throw ConfigError("estimator.krr.trend: expected linear or none");
    s.krr.trend = trend == "linear" ? KrrTrend::linear : KrrTrend::none;
    s.krr.validate();
  }
  if (j.contains("strata")) {
    const auto& k = j.at("strata");
    require_keys(k, {"moment", "groups"}, "estimator.strata");
    auto moment = get_or<std::string>(k, "moment", "variance", "estimator.strata");
    if (moment != "mean" && moment != "variance") throw ConfigError("estimator.strata.moment: expected mean or variance");
    s.strata.moment = moment == "mean" ? StrataMoment::mean : StrataMoment::variance;
    s.strata.groups = get_or<std::size_t>(k, "groups", s.strata.groups, "estimator.strata");
    if (s.strata.groups < 1) throw ConfigError("estimator.strata.groups must be at least 1");
  }
  s.smooth = get_or<bool>(j, "smooth", false, w);
  if (j.contains("grid")) {
    s.grid = need<std::vector<double>>(j, "grid", w);
    validate_grid(s.grid);
  }
  if (j.contains("score_bins")) s.score_bucketing = Bucketing::equal_width(need<std::size_t>(j, "score_bins", w));
  return s;
}

inline BootstrapOptions parse_bootstrap(const json& j, std::size_t default_b) {
  const std::string w = "bootstrap";
  BootstrapOptions o;
  o.B = default_b;
  if (j.is_null()) return o;
  require_keys(j, {"B", "level", "type"}, w);
  o.B = get_or<std::size_t>(j, "B", o.B, w);
  o.level = get_or<double>(j, "level", o.level, w);
  auto type = get_or<std::string>(j, "type", "percentile", w);
  if (type != "percentile" && type != "basic") throw ConfigError("bootstrap.type: expected percentile or basic");
  o.type = type == "percentile" ? IntervalType::percentile : IntervalType::basic;
  if (!(o.level > 0.0 && o.level < 1.0)) throw ConfigError("bootstrap.level must lie in (0,1)");
  return o;
}

inline EffectForm parse_effect(const json& j, const std::string& where) {
  auto e = get_or<std::string>(j, "effect", "homogeneous", where);
  if (e == "homogeneous") return EffectForm::homogeneous;
  if (e == "heterogeneous") return EffectForm::heterogeneous;
  throw ConfigError(where + ".effect: expected homogeneous or heterogeneous");
}

inline SigmaMethod parse_sigma_method(const json& j, const std::string& where) {
  auto s = get_or<std::string>(j, "sigma_method", "finite-sample", where);
  if (s == "finite-sample") return SigmaMethod::finite_sample;
  if (s == "moment") return SigmaMethod::moment;
  throw ConfigError(where + ".sigma_method: expected finite-sample or moment");
}

inline StudyConfig parse_simulate(const json& j, const fs::path& base, std::uint64_t seed, std::size_t workers) {
  require_keys(j, {"dgp", "methods", "n_sims", "bootstrap", "sigma_method", "seed", "workers"}, "config");
  StudyConfig c;
  const auto& d = j.contains("dgp") ? j.at("dgp") : throw ConfigError("config: missing required key 'dgp'");
  require_keys(d, {"graph", "design", "effect", "sigma2_eps", "sigma2_gamma", "redraw_graph", "gps"}, "dgp");
  c.dgp.graph = parse_graph(d.value("graph", json::object()), base);
  c.dgp.redraw_graph = get_or<bool>(d, "redraw_graph", false, "dgp");
  if (c.dgp.graph.kind == GraphKind::external_file) {
    if (c.dgp.redraw_graph) throw ConfigError("dgp: an external graph cannot be redrawn");
    auto loaded = materialize_graph(c.dgp.graph, seed);
    c.dgp.design = parse_design(d.value("design", json::object()), base, &loaded.ids, loaded.graph.m_diversion());
    c.dgp.fixed_graph = std::make_shared<const BipartiteGraph>(std::move(loaded.graph));
  } else {
    c.dgp.design = parse_design(d.value("design", json::object()), base, nullptr, c.dgp.graph.m_diversion);
  }
  c.dgp.effect = parse_effect(d, "dgp");
  c.dgp.sigma2_eps = get_or<double>(d, "sigma2_eps", 0.5, "dgp");
  c.dgp.sigma2_gamma = get_or<double>(d, "sigma2_gamma", 0.0, "dgp");
  c.dgp.gps = parse_gps(d.value("gps", json::object()));
  if (!j.contains("methods") || !j.at("methods").is_array() || j.at("methods").empty())
    throw ConfigError("config.methods: expected a nonempty list");
  for (const auto& m : j.at("methods")) {
    MethodSpec ms;
    if (m.is_string()) {
      ms.estimator = parse_estimator(m);
      ms.name = to_string(ms.estimator.kind);
      c.methods.push_back(ms);
      continue;
    }
    require_keys(m, {"name", "estimator", "interval"}, "methods[]");
    ms.estimator = parse_estimator(m.contains("estimator") ? m.at("estimator") : throw ConfigError("methods[]: missing estimator"));
    ms.name = get_or<std::string>(m, "name", to_string(ms.estimator.kind), "methods[]");
    ms.interval = parse_interval_method(get_or<std::string>(m, "interval", "naive-bootstrap", "methods[]"));
    c.methods.push_back(ms);
  }
  if (j.contains("n_sims") && j.at("n_sims").is_number_integer() && j.at("n_sims").get<long long>() < 1)
    throw ConfigError("config.n_sims: must be at least 1");
  c.n_sims = get_or<std::size_t>(j, "n_sims", 100, "config");
  c.boot = parse_bootstrap(j.value("bootstrap", json()), 200);
  c.sigma_method = parse_sigma_method(j, "config");
  c.seed = seed;
  c.workers = workers;
  c.validate();
  return c;
}

inline SweepConfig parse_sweep(const json& j, const fs::path& base, std::uint64_t seed, std::size_t workers) {
  require_keys(j, {"graph", "shares", "effect", "design", "sigma2_eps", "sigma2_gamma", "estimator", "n_sims",
                   "bootstrap", "seed", "workers"},
               "config");
  SweepConfig c;
  json g = j.value("graph", json::object());
  if (!g.contains("kind")) g["kind"] = "blocks";
  c.graph = parse_graph(g, base);
  if (j.contains("shares")) c.shares = need<std::vector<double>>(j, "shares", "config");
  c.effect = parse_effect(j, "config");
  c.design = parse_design(j.value("design", json::object()), base, nullptr, c.graph.m_diversion);
  c.sigma2_eps = get_or<double>(j, "sigma2_eps", 0.5, "config");
  c.sigma2_gamma = get_or<double>(j, "sigma2_gamma", 0.5, "config");
  if (j.contains("estimator")) c.estimator = parse_estimator(j.at("estimator"));
  if (j.contains("n_sims") && j.at("n_sims").is_number_integer() && j.at("n_sims").get<long long>() < 1)
    throw ConfigError("config.n_sims: must be at least 1");
  c.n_sims = get_or<std::size_t>(j, "n_sims", 100, "config");
  c.boot = parse_bootstrap(j.value("bootstrap", json()), 200);
  c.seed = seed;
  c.workers = workers;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Data files for `estimate`

/// Reads `outcome_id,<column>` aligned to the graph's outcome ids.
inline std::vector<double> load_unit_column(std::istream& in, const std::vector<std::string>& outcome_ids,
                                            const std::string& column, const char* what) {
  auto rows = csv::read_table(in, {"outcome_id", column});
  if (rows.empty()) throw ValidationError(std::string(what) + " file has no rows");
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < outcome_ids.size(); ++i) index.emplace(outcome_ids[i], i);
  std::vector<double> v(outcome_ids.size(), 0.0);
  std::vector<bool> seen(outcome_ids.size(), false);
  for (const auto& row : rows) {
    auto it = index.find(row.fields[0]);
    if (it == index.end()) throw ParseError(row.line, "unknown outcome_id '" + row.fields[0] + "'");
    if (seen[it->second]) throw ValidationError("line " + std::to_string(row.line) + ": duplicate outcome_id");
    seen[it->second] = true;
    v[it->second] = csv::parse_double(row.fields[1], row.line, what);
  }
  for (std::size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ValidationError(std::string(what) + " file: no entry for outcome_id '" + outcome_ids[i] + "'");
  return v;
}

// ---------------------------------------------------------------------------
// Provenance and output

/// FNV-1a over the canonical dump of the effective config.
inline std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

class Output {
 public:
  Output(const Options& opt, const json& config, std::uint64_t seed)
      : dir_(opt.out_dir), format_(opt.format), command_(opt.command), config_(config), seed_(seed) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    auto path = dir_ / name;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    files_.push_back(name);
    return out;
  }

  bool json_format() const { return format_ == "json"; }
  void warn(const std::string& w) { warnings_.push_back(w); }

  /// JSON sidecar with the provenance of everything written.
  void finish(bool partial, json extra = json::object()) {
    json meta;
    meta["tool"] = "bipgps";
    meta["version"] = kVersion;
    meta["command"] = command_;
    meta["config_hash"] = hex(config_hash(config_));
    meta["seed"] = seed_;
    meta["partial"] = partial;
    meta["files"] = files_;
    meta["warnings"] = warnings_;
    meta["config"] = config_;
    for (auto& [k, v] : extra.items()) meta[k] = v;
    std::ofstream out(dir_ / (command_ + ".meta.json"));
    if (!out) throw ConfigError("cannot write provenance sidecar");
    out << meta.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string format_;
  std::string command_;
  json config_;
  std::uint64_t seed_;
  std::vector<std::string> files_;
  std::vector<std::string> warnings_;
};

inline json nan_to_null(double v) { return std::isnan(v) ? json(nullptr) : json(v); }

// ---------------------------------------------------------------------------
// Commands

inline int cmd_graph_gen(const Options& opt, const json& cfg, const fs::path& base, std::uint64_t seed) {
  require_keys(cfg, {"graph", "seed"}, "config");
  auto spec = parse_graph(cfg.value("graph", json::object()), base);
  auto loaded = materialize_graph(spec, seed);
  const auto& g = loaded.graph;
  Output out(opt, cfg, seed);
  {
    auto f = out.open("edges.csv");
    write_edge_list(f, g, loaded.ids);
  }
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < g.n_outcome(); ++i) ++hist[g.degree(i)];
  json summary;
  summary["n_outcome"] = g.n_outcome();
  summary["m_diversion"] = g.m_diversion();
  summary["edges"] = g.edge_count();
  summary["components"] = component_count(g);
  json h = json::array();
  for (auto [deg, count] : hist) h.push_back({{"degree", deg}, {"count", count}});
  summary["degree_histogram"] = h;
  {
    auto f = out.open("summary.json");
    f << summary.dump(2) << '\n';
  }
  if (!opt.quiet) std::cerr << "graph-gen: N=" << g.n_outcome() << " M=" << g.m_diversion() << " edges=" << g.edge_count() << '\n';
  out.finish(false);
  return 0;
}

inline int cmd_gps(const Options& opt, const json& cfg, const fs::path& base, std::uint64_t seed) {
  require_keys(cfg, {"graph", "design", "gps", "assignment", "seed"}, "config");
  auto spec = parse_graph(cfg.value("graph", json::object()), base);
  auto loaded = materialize_graph(spec, seed);
  auto design = parse_design(cfg.value("design", json::object()), base, &loaded.ids, loaded.graph.m_diversion());
  auto settings = parse_gps(cfg.value("gps", json::object()));
  std::optional<Assignment> z;
  if (cfg.contains("assignment")) {
    auto in = open_input(resolve(base, need<std::string>(cfg, "assignment", "config")), "assignment");
    z = load_assignment_file(in, loaded.ids.diversion);
  }
  auto table = build_gps(loaded.graph, design, settings, seed, z ? &*z : nullptr);
  Output out(opt, cfg, seed);
  if (out.json_format()) {
    json units = json::array();
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& d = table.distribution(i);
      units.push_back({{"outcome_id", loaded.ids.outcome[i]}, {"level", d.level}, {"probability", d.prob}});
    }
    auto f = out.open("gps.json");
    f << json{{"mode", to_string(table.mode())}, {"units", units}}.dump(2) << '\n';
  } else {
    auto f = out.open("gps.csv");
    write_gps_table(f, table, loaded.ids.outcome);
  }
  {
    auto f = out.open("outcome_ids.csv");
    write_id_map(f, loaded.ids, Side::outcome);
  }
  out.finish(false, {{"gps_mode", to_string(table.mode())}});
  return 0;
}

inline int cmd_estimate(const Options& opt, const json& cfg, const fs::path& base, std::uint64_t seed) {
  require_keys(cfg, {"graph", "design", "gps", "data", "estimators", "interval", "grid", "seed", "workers"}, "config");
  auto spec = parse_graph(cfg.value("graph", json::object()), base);
  auto loaded = materialize_graph(spec, seed);
  auto graph = std::make_shared<const BipartiteGraph>(loaded.graph);
  auto design = parse_design(cfg.value("design", json::object()), base, &loaded.ids, graph->m_diversion());
  auto settings = parse_gps(cfg.value("gps", json::object()));

  const json data = cfg.contains("data") ? cfg.at("data") : throw ConfigError("config: missing required key 'data'");
  require_keys(data, {"outcomes", "assignment", "exposures"}, "data");
  auto yin = open_input(resolve(base, need<std::string>(data, "outcomes", "data")), "outcomes");
  auto y = load_unit_column(yin, loaded.ids.outcome, "y", "outcome");
  std::optional<Assignment> z;
  std::vector<double> e;
  if (data.contains("assignment")) {
    auto in = open_input(resolve(base, need<std::string>(data, "assignment", "data")), "assignment");
    z = load_assignment_file(in, loaded.ids.diversion);
    e = linear_exposure(*graph, *z).e;
  } else if (data.contains("exposures")) {
    auto in = open_input(resolve(base, need<std::string>(data, "exposures", "data")), "exposures");
    e = load_unit_column(in, loaded.ids.outcome, "e", "exposure");
  } else {
    throw ConfigError("data: need an assignment or exposures file");
  }
  auto gps = std::make_shared<const GpsTable>(build_gps(*graph, design, settings, seed, z ? &*z : nullptr));
  auto dataset = make_dataset(graph, gps, y, e);

  std::vector<double> grid = cfg.contains("grid") ? need<std::vector<double>>(cfg, "grid", "config") : default_grid();
  validate_grid(grid);
  if (!cfg.contains("estimators") || !cfg.at("estimators").is_array() || cfg.at("estimators").empty())
    throw ConfigError("config.estimators: expected a nonempty list");
  std::vector<EstimatorSpec> specs;
  for (const auto& s : cfg.at("estimators")) specs.push_back(parse_estimator(s));

  json iv = cfg.value("interval", json::object());
  require_keys(iv, {"method", "B", "level", "type"}, "interval");
  auto method = parse_interval_method(get_or<std::string>(iv, "method", "none", "interval"));
  json bj = iv;
  bj.erase("method");
  auto boot = parse_bootstrap(bj, 1000);
  boot.seed = derive_seed(seed, {3});
  boot.workers = opt.workers.value_or(get_or<std::size_t>(cfg, "workers", 1, "config"));

  Output out(opt, cfg, seed);
  for (const auto& w : dataset.warnings) out.warn(w);
  json rows = json::array();
  auto add = [&](const std::string& est, const std::string& quantity, std::optional<double> level, double value,
                 const std::optional<IntervalEstimate>& ci, const std::vector<std::string>& warnings) {
    json r;
    r["estimator"] = est;
    r["quantity"] = quantity;
    r["level"] = level ? json(*level) : json(nullptr);
    r["value"] = value;
    r["lower"] = ci ? json(ci->lower) : json(nullptr);
    r["upper"] = ci ? json(ci->upper) : json(nullptr);
    r["interval"] = ci ? json(ci->method) : json(nullptr);
    r["B"] = ci ? json(ci->B) : json(nullptr);
    std::string wl;
    for (const auto& w : warnings) wl += (wl.empty() ? "" : "; ") + w;
    r["warnings"] = wl;
    rows.push_back(r);
    for (const auto& w : warnings) out.warn(est + ": " + w);
  };

  Population pop = Population::of(dataset);
  std::vector<std::size_t> comp = component_labels(*graph), row_labels(dataset.size());
  for (std::size_t k = 0; k < dataset.size(); ++k) row_labels[k] = comp[dataset.unit[k]];
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const auto& es = specs[s];
    const std::string name = to_string(es.kind);
    std::optional<IntervalEstimate> ci;
    Estimate point;
    BootstrapOptions b = boot;
    b.seed = derive_seed(seed, {3, s});
    switch (method) {
      case IntervalMethod::none: point = estimate_ate(es, dataset, pop); break;
      case IntervalMethod::naive_bootstrap: ci = naive_bootstrap(dataset, es, b, pop); break;
      case IntervalMethod::block_bootstrap: ci = block_bootstrap(dataset, row_labels, es, b, pop); break;
      case IntervalMethod::parametric_bootstrap:
      case IntervalMethod::ols_asymptotic: {
        MethodSpec ms{name, es, method};
        ms.validate();
        StudyConfig sc;
        sc.boot = b;
        auto rec = detail::run_method(sc, ms, dataset, pop, row_labels, b.seed);
        if (!rec.ok) throw NumericalError(name + ": " + rec.error);
        ci = rec.interval;
        break;
      }
    }
    if (ci) {
      point.value = ci->point;
      point.warnings = ci->flags;
      if (ci->failures > 0) point.warnings.push_back(std::to_string(ci->failures) + " bootstrap replicate(s) failed");
    }
    add(name, "ate", std::nullopt, point.value, ci, point.warnings);

    // Dose-response rows where the estimator defines a curve.
    switch (es.kind) {
      case EstimatorKind::naive_mean:
        for (double lv : grid) {
          try {
            add(name, "mu", lv, naive_mean(dataset, lv), std::nullopt, {});
          } catch (const DataError&) {
            // Levels nobody received carry no naive estimate.
          }
        }
        break;
      case EstimatorKind::ht:
        for (double lv : grid) {
          bool positive = true;
          for (std::size_t u : dataset.unit) positive = positive && gps->probability(u, lv) > 0.0;
          if (!positive) continue;  // positivity fails somewhere, the estimate is meaningless
          auto h = ht_estimate(dataset, lv);
          add(name, "mu", lv, h.value, std::nullopt, h.warnings);
        }
        break;
      case EstimatorKind::gps_cells:
      case EstimatorKind::gps_poly:
      case EstimatorKind::gps_krr: {
        std::optional<BetaSurface> surface;
        if (es.kind == EstimatorKind::gps_cells) {
          surface = beta_cell_means(dataset, dataset.bucketing(), es.score_bucketing.value_or(Bucketing::atoms()));
        } else if (es.kind == EstimatorKind::gps_poly) {
          surface = beta_poly_fit(dataset);
        } else {
          surface = beta_krr_fit(dataset, es.krr);
        }
        std::vector<double> levels;
        std::string skipped;
        for (double lv : grid) {
          if (es.kind != EstimatorKind::gps_cells) {
            levels.push_back(lv);
            continue;
          }
          try {
            (void)dose_response(*surface, *gps, dataset.unit, {lv});
            levels.push_back(lv);
          } catch (const DataError&) {
            skipped += (skipped.empty() ? "" : " ") + csv::format_double(lv);
          }
        }
        if (!skipped.empty()) out.warn(name + ": no cell-table estimate at exposure levels " + skipped);
        if (levels.empty()) break;
        auto curve = dose_response(*surface, *gps, dataset.unit, levels, name);
        if (es.smooth) curve = smooth_linear(curve);
        for (std::size_t k = 0; k < levels.size(); ++k) add(name, "mu", levels[k], curve.mu_hat[k], std::nullopt, {});
        break;
      }
      default: break;
    }
  }

  if (out.json_format()) {
    auto f = out.open("results.json");
    f << rows.dump(2) << '\n';
  } else {
    auto f = out.open("results.csv");
    f << "estimator,quantity,level,value,lower,upper,interval,B,warnings\n";
    auto cell = [](const json& v) {
      if (v.is_null()) return std::string("NA");
      if (v.is_number_float()) return csv::format_double(v.get<double>());
      if (v.is_string()) return csv::quote(v.get<std::string>());
      return v.dump();
    };
    for (const auto& r : rows) {
      f << cell(r["estimator"]) << ',' << cell(r["quantity"]) << ',' << cell(r["level"]) << ',' << cell(r["value"])
        << ',' << cell(r["lower"]) << ',' << cell(r["upper"]) << ',' << cell(r["interval"]) << ',' << cell(r["B"])
        << ',' << cell(r["warnings"]) << '\n';
    }
  }
  out.finish(false, {{"n_units", dataset.size()}, {"gps_mode", to_string(gps->mode())}});
  return 0;
}

inline json study_json(const SimStudyResult& r) {
  json methods = json::array();
  for (const auto& m : r.methods) {
    json census = json::object();
    for (const auto& [msg, c] : m.failure_census) census[msg] = c;
    methods.push_back({{"name", m.name},
                       {"estimator", m.estimator},
                       {"interval", m.interval},
                       {"n_sims", m.n_ok},
                       {"failures", m.failures},
                       {"failure_census", census},
                       {"bias", nan_to_null(m.bias)},
                       {"rmse", nan_to_null(m.rmse)},
                       {"coverage", nan_to_null(m.coverage)},
                       {"mean_width", nan_to_null(m.mean_width)}});
  }
  return {{"n_sims_requested", r.n_sims_requested}, {"n_sims", r.n_sims}, {"B", r.B}, {"level", r.level},
          {"seed", r.seed}, {"partial", r.partial}, {"methods", methods}};
}

inline void progress_line(const Options& opt, const std::string& what, std::size_t done, std::size_t total) {
  if (opt.quiet) return;
  std::cerr << '\r' << what << ' ' << done << '/' << total << std::flush;
  if (done == total) std::cerr << '\n';
}

inline int cmd_simulate(const Options& opt, const json& cfg, const fs::path& base, std::uint64_t seed) {
  std::size_t workers = opt.workers.value_or(get_or<std::size_t>(cfg, "workers", 1, "config"));
  auto study = parse_simulate(cfg, base, seed, workers);
  study.cancel = &interrupted();
  study.progress = [&](std::size_t d, std::size_t t) { progress_line(opt, "simulate", d, t); };
  auto result = run_study(study);
  Output out(opt, cfg, seed);
  if (out.json_format()) {
    auto f = out.open("study.json");
    f << study_json(result).dump(2) << '\n';
  } else {
    {
      auto f = out.open("study.csv");
      write_study_csv(f, result);
    }
    {
      auto f = out.open("table.csv");
      write_table_layout_csv(f, result);
    }
    {
      auto f = out.open("replicates.csv");
      write_replicates_csv(f, result);
    }
  }
  out.finish(result.partial, {{"n_sims_completed", result.n_sims}});
  if (result.partial) {
    std::cerr << json{{"warning", "interrupted; partial results written"}, {"n_sims", result.n_sims}}.dump() << '\n';
    return 130;
  }
  return 0;
}

inline int cmd_sweep(const Options& opt, const json& cfg, const fs::path& base, std::uint64_t seed) {
  std::size_t workers = opt.workers.value_or(get_or<std::size_t>(cfg, "workers", 1, "config"));
  auto sweep = parse_sweep(cfg, base, seed, workers);
  sweep.cancel = &interrupted();
  sweep.progress = [&](std::size_t k, std::size_t d, std::size_t t) {
    progress_line(opt, "sweep share " + std::to_string(k + 1) + "/" + std::to_string(sweep.shares.size()), d, t);
  };
  auto result = edges_cut_sweep(sweep);
  Output out(opt, cfg, seed);
  if (out.json_format()) {
    json rows = json::array();
    for (const auto& r : result.rows)
      rows.push_back({{"cut_share", r.share},
                      {"realized_cut_share", r.realized_share},
                      {"naive_coverage", nan_to_null(r.naive_coverage)},
                      {"clustered_coverage", nan_to_null(r.block_coverage)},
                      {"naive_bias", nan_to_null(r.bias)},
                      {"n_sims", r.n_sims},
                      {"failures", r.failures}});
    auto f = out.open("sweep.json");
    f << rows.dump(2) << '\n';
  } else {
    auto f = out.open("sweep.csv");
    write_sweep_csv(f, result);
  }
  out.finish(result.partial);
  if (result.partial) {
    std::cerr << json{{"warning", "interrupted; partial results written"}}.dump() << '\n';
    return 130;
  }
  return 0;
}

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numerical: return 4;
  }
  return 1;
}

inline void report(std::ostream& err, const std::string& kind, const std::string& message) {
  err << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << '\n';
}

/// Loads the config, applies overrides and dispatches. Every failure becomes
/// a JSON error object on `err` and a nonzero exit code.
inline int run(const Options& opt, std::ostream& err = std::cerr) {
  try {
    if (opt.format != "csv" && opt.format != "json") throw ConfigError("--format must be csv or json");
    if (opt.config_path.empty()) throw ConfigError("--config is required");
    std::ifstream in(opt.config_path);
    if (!in) throw ConfigError("cannot open config file '" + opt.config_path + "'");
    json cfg;
    try {
      cfg = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg.is_object()) throw ConfigError("config: top level must be an object");
    std::uint64_t seed = opt.seed.value_or(get_or<std::uint64_t>(cfg, "seed", 0, "config"));
    cfg["seed"] = seed;  // the effective seed is part of the provenance
    if (opt.workers) cfg["workers"] = *opt.workers;
    fs::path base = fs::path(opt.config_path).parent_path();
    if (opt.command == "graph-gen") return cmd_graph_gen(opt, cfg, base, seed);
    if (opt.command == "gps") return cmd_gps(opt, cfg, base, seed);
    if (opt.command == "estimate") return cmd_estimate(opt, cfg, base, seed);
    if (opt.command == "simulate") return cmd_simulate(opt, cfg, base, seed);
    if (opt.command == "sweep") return cmd_sweep(opt, cfg, base, seed);
    throw ConfigError("unknown command '" + opt.command + "'");
  } catch (const Error& e) {
    report(err, to_string(e.kind()), e.what());
    return exit_code(e.kind());
  } catch (const json::exception& e) {
    report(err, "config", e.what());
    return 2;
  } catch (const std::exception& e) {
    report(err, "internal", e.what());
    return 1;
  }
}

}  // namespace bipgps::cli
