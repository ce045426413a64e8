#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "bipgps/csv.hpp"
#include "bipgps/error.hpp"
#include "bipgps/rng.hpp"

namespace bipgps {

struct Edge {
  std::size_t diversion;
  double weight;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Weighted outcome-to-diversion adjacency. Rows are stored contiguously and
/// never change after construction.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;

  BipartiteGraph(std::size_t n_outcome, std::size_t m_diversion,
                 const std::vector<std::vector<Edge>>& rows, bool row_normalized = false)
      : n_outcome_(n_outcome), m_diversion_(m_diversion), row_normalized_(row_normalized) {
    if (rows.size() != n_outcome) {
      throw ValidationError("graph has " + std::to_string(rows.size()) + " rows, expected " +
                            std::to_string(n_outcome));
    }
    offsets_.assign(1, 0);
    offsets_.reserve(n_outcome + 1);
    std::vector<std::size_t> seen(m_diversion, static_cast<std::size_t>(-1));
    for (std::size_t i = 0; i < n_outcome; ++i) {
      for (const Edge& e : rows[i]) {
        if (e.diversion >= m_diversion) {
          throw ValidationError("outcome unit " + std::to_string(i) + ": diversion index " +
                                std::to_string(e.diversion) + " out of range");
        }
        if (!std::isfinite(e.weight)) {
          throw ValidationError("outcome unit " + std::to_string(i) + ": non-finite weight");
        }
        if (e.weight < 0.0) {
          throw ValidationError("outcome unit " + std::to_string(i) + ": negative weight " +
                                csv::format_double(e.weight));
        }
        if (seen[e.diversion] == i) {
          throw ValidationError("duplicate edge (" + std::to_string(i) + ", " +
                                std::to_string(e.diversion) + ")");
        }
        seen[e.diversion] = i;
        edges_.push_back(e);
      }
      offsets_.push_back(edges_.size());
      if (row_normalized && !rows[i].empty()) {
        double s = row_sum(i);
        if (std::abs(s - 1.0) > 1e-9) {
          throw ValidationError("outcome unit " + std::to_string(i) +
                                ": row flagged normalized but sums to " + csv::format_double(s));
        }
      }
    }
  }

  std::size_t n_outcome() const noexcept { return n_outcome_; }
  std::size_t m_diversion() const noexcept { return m_diversion_; }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  bool row_normalized() const noexcept { return row_normalized_; }

  std::span<const Edge> row(std::size_t i) const {
    return {edges_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }
  std::size_t degree(std::size_t i) const { return offsets_[i + 1] - offsets_[i]; }

  double row_sum(std::size_t i) const {
    double s = 0.0;
    for (const Edge& e : row(i)) s += e.weight;
    return s;
  }

  double max_row_sum() const {
    double best = 0.0;
    for (std::size_t i = 0; i < n_outcome_; ++i) best = std::max(best, row_sum(i));
    return best;
  }

  std::vector<std::size_t> isolated_units() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < n_outcome_; ++i)
      if (degree(i) == 0) out.push_back(i);
    return out;
  }

  /// Sum of squared weights, i.e. the trace of W W^T.
  double frobenius_sq() const {
    double s = 0.0;
    for (const Edge& e : edges_) s += e.weight * e.weight;
    return s;
  }

  friend bool operator==(const BipartiteGraph&, const BipartiteGraph&) = default;

 private:
  std::size_t n_outcome_ = 0;
  std::size_t m_diversion_ = 0;
  bool row_normalized_ = false;
  std::vector<std::size_t> offsets_{0};
  std::vector<Edge> edges_;
};

/// Immutable adjacency row W_i.
inline std::span<const Edge> row_weights(const BipartiteGraph& graph, std::size_t i) {
  if (i >= graph.n_outcome()) {
    throw DataError("outcome index " + std::to_string(i) + " out of range [0, " +
                    std::to_string(graph.n_outcome()) + ")");
  }
  return graph.row(i);
}

// External ids in dense-index order (first appearance in the source).
struct IdMap {
  std::vector<std::string> outcome;
  std::vector<std::string> diversion;
};

struct LoadedGraph {
  BipartiteGraph graph;
  IdMap ids;
};

/// Reads `outcome_id,diversion_id,weight`. Ids are densely re-indexed in
/// first-appearance order; with `normalize` each nonempty row is rescaled to
/// sum to one.
inline LoadedGraph load_edge_list(std::istream& in, bool normalize) {
  auto rows = csv::read_table(in, {"outcome_id", "diversion_id", "weight"});
  std::unordered_map<std::string, std::size_t> outcome_index, diversion_index;
  IdMap ids;
  std::vector<std::vector<Edge>> adjacency;
  std::vector<std::vector<std::size_t>> source_line;
  for (const auto& row : rows) {
    const std::string& oid = row.fields[0];
    const std::string& did = row.fields[1];
    if (oid.empty()) throw ParseError(row.line, "empty outcome_id");
    if (did.empty()) throw ParseError(row.line, "empty diversion_id");
    double w = csv::parse_double(row.fields[2], row.line, "weight");
    if (!std::isfinite(w)) throw ValidationError("line " + std::to_string(row.line) + ": non-finite weight");
    if (w < 0.0) {
      throw ValidationError("line " + std::to_string(row.line) + ": negative weight " + row.fields[2]);
    }
    auto [oit, onew] = outcome_index.try_emplace(oid, ids.outcome.size());
    if (onew) {
      ids.outcome.push_back(oid);
      adjacency.emplace_back();
      source_line.emplace_back();
    }
    auto [dit, dnew] = diversion_index.try_emplace(did, ids.diversion.size());
    if (dnew) ids.diversion.push_back(did);
    auto& adj = adjacency[oit->second];
    for (std::size_t k = 0; k < adj.size(); ++k) {
      if (adj[k].diversion == dit->second) {
        throw ValidationError("line " + std::to_string(row.line) + ": duplicate edge (" + oid + ", " +
                              did + "), first seen on line " +
                              std::to_string(source_line[oit->second][k]));
      }
    }
    adj.push_back({dit->second, w});
    source_line[oit->second].push_back(row.line);
  }
  if (normalize) {
    for (std::size_t i = 0; i < adjacency.size(); ++i) {
      auto& adj = adjacency[i];
      if (adj.empty()) continue;
      double s = 0.0;
      for (const Edge& e : adj) s += e.weight;
      if (s <= 0.0) {
        throw ValidationError("outcome " + ids.outcome[i] + ": cannot normalize a row of zero weights");
      }
      for (Edge& e : adj) e.weight /= s;
    }
  }
  std::size_t n = adjacency.size();
  std::size_t m = ids.diversion.size();
  return {BipartiteGraph(n, m, adjacency, normalize), std::move(ids)};
}

inline IdMap default_ids(const BipartiteGraph& graph) {
  IdMap ids;
  for (std::size_t i = 0; i < graph.n_outcome(); ++i) ids.outcome.push_back("o" + std::to_string(i));
  for (std::size_t j = 0; j < graph.m_diversion(); ++j) ids.diversion.push_back("d" + std::to_string(j));
  return ids;
}

inline void write_edge_list(std::ostream& out, const BipartiteGraph& graph, const IdMap& ids) {
  out << "outcome_id,diversion_id,weight\n";
  for (std::size_t i = 0; i < graph.n_outcome(); ++i) {
    for (const Edge& e : graph.row(i)) {
      out << csv::quote(ids.outcome[i]) << ',' << csv::quote(ids.diversion[e.diversion]) << ','
          << csv::format_double(e.weight) << '\n';
    }
  }
}

enum class Side { outcome, diversion };

/// Two-column id mapping: external id, dense index.
inline void write_id_map(std::ostream& out, const IdMap& ids, Side side) {
  const auto& v = side == Side::outcome ? ids.outcome : ids.diversion;
  out << (side == Side::outcome ? "outcome_id" : "diversion_id") << ",index\n";
  for (std::size_t k = 0; k < v.size(); ++k) out << csv::quote(v[k]) << ',' << k << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic graphs

enum class GraphKind { uniform_degree, blocks, external_file };

struct GraphSpec {
  GraphKind kind = GraphKind::uniform_degree;
  std::size_t n_outcome = 1000;
  std::size_t m_diversion = 100;
  std::size_t deg_min = 1;
  std::size_t deg_max = 10;
  std::size_t blocks = 10;
  double cross_share = 0.0;
  std::string path;
  bool normalize = true;  // external files only
  std::uint64_t seed = 0;

  void validate() const {
    if (kind == GraphKind::external_file) {
      if (path.empty()) throw ConfigError("graph spec: external-file kind needs a path");
      return;
    }
    if (n_outcome == 0 || m_diversion == 0) throw ConfigError("graph spec: N and M must be positive");
    if (deg_min < 1 || deg_min > deg_max) {
      throw ConfigError("graph spec: degree bounds must satisfy 1 <= min <= max");
    }
    if (deg_max > m_diversion) {
      throw ConfigError("graph spec: deg_max " + std::to_string(deg_max) + " exceeds M=" +
                        std::to_string(m_diversion));
    }
    if (!(cross_share >= 0.0 && cross_share <= 1.0)) {
      throw ConfigError("graph spec: cross-edge share must lie in [0,1]");
    }
    if (kind == GraphKind::blocks) {
      if (blocks < 1 || blocks > n_outcome || blocks > m_diversion) {
        throw ConfigError("graph spec: block count must be in [1, min(N, M)]");
      }
      if (deg_max > m_diversion / blocks) {
        throw ConfigError("graph spec: deg_max " + std::to_string(deg_max) +
                          " exceeds the smallest block's diversion count " +
                          std::to_string(m_diversion / blocks));
      }
      if (blocks < 2 && cross_share > 0.0) {
        throw ConfigError("graph spec: cross edges need at least two blocks");
      }
    }
  }
};

/// Contiguous split of `count` items into `k` groups whose sizes differ by at most one.
inline std::vector<std::size_t> block_partition(std::size_t count, std::size_t k) {
  std::vector<std::size_t> label(count);
  for (std::size_t i = 0; i < count; ++i) label[i] = i * k / count;
  return label;
}

namespace detail {

// Floyd's algorithm: `m` distinct draws from `pool`, returned sorted.
inline std::vector<std::size_t> sample_distinct(const std::vector<std::size_t>& pool, std::size_t m,
                                                Rng& rng) {
  std::vector<std::size_t> picked;
  picked.reserve(m);
  std::size_t n = pool.size();
  for (std::size_t j = n - m; j < n; ++j) {
    std::uniform_int_distribution<std::size_t> pick(0, j);
    std::size_t t = pick(rng);
    if (std::find(picked.begin(), picked.end(), t) != picked.end()) t = j;
    picked.push_back(t);
  }
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t t : picked) out.push_back(pool[t]);
  std::sort(out.begin(), out.end());
  return out;
}

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  void unite(std::size_t a, std::size_t b) { parent_[find(a)] = find(b); }

 private:
  std::vector<std::size_t> parent_;
};

inline std::vector<std::vector<Edge>> rows_of(const BipartiteGraph& g) {
  std::vector<std::vector<Edge>> rows(g.n_outcome());
  for (std::size_t i = 0; i < g.n_outcome(); ++i) rows[i].assign(g.row(i).begin(), g.row(i).end());
  return rows;
}

}  // namespace detail

/// Connected-component count over both sides (isolated nodes count as components).
inline std::size_t component_count(const BipartiteGraph& g) {
  detail::UnionFind uf(g.n_outcome() + g.m_diversion());
  for (std::size_t i = 0; i < g.n_outcome(); ++i)
    for (const Edge& e : g.row(i)) uf.unite(i, g.n_outcome() + e.diversion);
  std::size_t count = 0;
  for (std::size_t v = 0; v < g.n_outcome() + g.m_diversion(); ++v)
    if (uf.find(v) == v) ++count;
  return count;
}

inline BipartiteGraph synth_graph(const GraphSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.kind == GraphKind::external_file) {
    throw ConfigError("synth_graph: external-file specs are loaded, not synthesized");
  }
  const std::size_t n = spec.n_outcome;
  const std::size_t m = spec.m_diversion;
  std::uniform_int_distribution<std::size_t> degree(spec.deg_min, spec.deg_max);
  std::vector<std::vector<Edge>> rows(n);

  auto fill_row = [&](std::size_t i, const std::vector<std::size_t>& pool) {
    std::size_t d = degree(rng);
    auto nbrs = detail::sample_distinct(pool, d, rng);
    rows[i].clear();
    for (std::size_t j : nbrs) rows[i].push_back({j, 1.0 / static_cast<double>(d)});
  };

  if (spec.kind == GraphKind::uniform_degree) {
    std::vector<std::size_t> pool(m);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t i = 0; i < n; ++i) fill_row(i, pool);
    return BipartiteGraph(n, m, rows, true);
  }

  // Blocks: each block is drawn until it forms a single connected component.
  const std::size_t k = spec.blocks;
  auto out_block = block_partition(n, k);
  auto div_block = block_partition(m, k);
  for (std::size_t b = 0; b < k; ++b) {
    std::vector<std::size_t> units, pool;
    for (std::size_t i = 0; i < n; ++i)
      if (out_block[i] == b) units.push_back(i);
    for (std::size_t j = 0; j < m; ++j)
      if (div_block[j] == b) pool.push_back(j);
    constexpr int kMaxAttempts = 200;
    bool connected = false;
    for (int attempt = 0; attempt < kMaxAttempts && !connected; ++attempt) {
      for (std::size_t i : units) fill_row(i, pool);
      detail::UnionFind uf(units.size() + pool.size());
      for (std::size_t a = 0; a < units.size(); ++a)
        for (const Edge& e : rows[units[a]]) {
          std::size_t pos = static_cast<std::size_t>(
              std::lower_bound(pool.begin(), pool.end(), e.diversion) - pool.begin());
          uf.unite(a, units.size() + pos);
        }
      std::size_t root = uf.find(0);
      connected = true;
      for (std::size_t v = 1; v < units.size() + pool.size(); ++v)
        if (uf.find(v) != root) {
          connected = false;
          break;
        }
    }
    if (!connected) {
      throw ValidationError("blocks graph: block " + std::to_string(b) +
                            " could not be drawn connected with the given degree bounds");
    }
  }

  if (spec.cross_share > 0.0) {
    std::vector<std::pair<std::size_t, std::size_t>> all;  // (row, position)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t p = 0; p < rows[i].size(); ++p) all.emplace_back(i, p);
    auto n_cut = static_cast<std::size_t>(std::llround(spec.cross_share * static_cast<double>(all.size())));
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    auto chosen = detail::sample_distinct(idx, n_cut, rng);
    for (std::size_t c : chosen) {
      auto [i, p] = all[c];
      std::vector<std::size_t> candidates;
      for (std::size_t j = 0; j < m; ++j) {
        if (div_block[j] == out_block[i]) continue;
        bool used = std::any_of(rows[i].begin(), rows[i].end(), [j](const Edge& e) { return e.diversion == j; });
        if (!used) candidates.push_back(j);
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      rows[i][p].diversion = candidates[pick(rng)];
    }
    for (auto& r : rows)
      std::sort(r.begin(), r.end(), [](const Edge& a, const Edge& b) { return a.diversion < b.diversion; });
  }
  return BipartiteGraph(n, m, rows, true);
}

/// Block label of every outcome unit for a blocks spec.
inline std::vector<std::size_t> block_labels(const GraphSpec& spec) {
  return block_partition(spec.n_outcome, spec.kind == GraphKind::blocks ? spec.blocks : 1);
}

/// Fraction of edges whose endpoints sit in different blocks.
inline double cut_share(const BipartiteGraph& g, const std::vector<std::size_t>& outcome_block,
                        const std::vector<std::size_t>& diversion_block) {
  if (g.edge_count() == 0) return 0.0;
  std::size_t cut = 0;
  for (std::size_t i = 0; i < g.n_outcome(); ++i)
    for (const Edge& e : g.row(i))
      if (outcome_block[i] != diversion_block[e.diversion]) ++cut;
  return static_cast<double>(cut) / static_cast<double>(g.edge_count());
}

}  // namespace bipgps
