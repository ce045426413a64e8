#pragma once

#include <cstddef>
#include <cstdint>
#include <istream>
#include <numeric>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "bipgps/csv.hpp"
#include "bipgps/error.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/rng.hpp"

namespace bipgps {

enum class DesignKind { bernoulli, bernoulli_heterogeneous, completely_randomized };

/// Randomization law over diversion units.
struct AssignmentDesign {
  DesignKind kind = DesignKind::bernoulli;
  double p = 0.5;
  std::vector<double> p_vec;
  std::size_t k = 0;
  bool allow_degenerate = false;  // p in {0,1}; test harness only

  static AssignmentDesign bernoulli(double p) { return {DesignKind::bernoulli, p, {}, 0, false}; }
  static AssignmentDesign heterogeneous(std::vector<double> p_vec) {
    return {DesignKind::bernoulli_heterogeneous, 0.0, std::move(p_vec), 0, false};
  }
  static AssignmentDesign completely_randomized(std::size_t k) {
    return {DesignKind::completely_randomized, 0.0, {}, k, false};
  }
  static AssignmentDesign degenerate_for_testing(double p) {
    return {DesignKind::bernoulli, p, {}, 0, true};
  }

  bool is_bernoulli() const { return kind != DesignKind::completely_randomized; }

  /// Marginal treatment probability of diversion unit j.
  double probability(std::size_t j, std::size_t m) const {
    switch (kind) {
      case DesignKind::bernoulli: return p;
      case DesignKind::bernoulli_heterogeneous: return p_vec[j];
      case DesignKind::completely_randomized: return static_cast<double>(k) / static_cast<double>(m);
    }
    return p;
  }

  void validate(std::size_t m) const {
    auto check = [&](double q, const std::string& where) {
      bool ok = allow_degenerate ? (q >= 0.0 && q <= 1.0) : (q > 0.0 && q < 1.0);
      if (!ok) throw ConfigError("design: probability " + csv::format_double(q) + where + " must lie in (0,1)");
    };
    switch (kind) {
      case DesignKind::bernoulli: check(p, ""); break;
      case DesignKind::bernoulli_heterogeneous:
        if (p_vec.size() != m) {
          throw ConfigError("design: " + std::to_string(p_vec.size()) + " probabilities for M=" +
                            std::to_string(m));
        }
        for (std::size_t j = 0; j < m; ++j) check(p_vec[j], " for diversion unit " + std::to_string(j));
        break;
      case DesignKind::completely_randomized:
        if (k > m) throw ConfigError("design: k=" + std::to_string(k) + " exceeds M=" + std::to_string(m));
        break;
    }
  }
};

struct Assignment {
  std::vector<std::uint8_t> z;

  std::size_t size() const { return z.size(); }
  std::size_t treated() const { return std::accumulate(z.begin(), z.end(), std::size_t{0}); }
};

struct ExposureProfile {
  std::vector<double> e;

  std::size_t size() const { return e.size(); }
  double operator[](std::size_t i) const { return e[i]; }
};

inline Assignment draw_assignment(const AssignmentDesign& design, std::size_t m, Rng& rng) {
  design.validate(m);
  Assignment a{std::vector<std::uint8_t>(m, 0)};
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  switch (design.kind) {
    case DesignKind::bernoulli:
      for (std::size_t j = 0; j < m; ++j) a.z[j] = unif(rng) < design.p ? 1 : 0;
      break;
    case DesignKind::bernoulli_heterogeneous:
      for (std::size_t j = 0; j < m; ++j) a.z[j] = unif(rng) < design.p_vec[j] ? 1 : 0;
      break;
    case DesignKind::completely_randomized: {
      std::vector<std::size_t> idx(m);
      std::iota(idx.begin(), idx.end(), 0);
      for (std::size_t t = 0; t < design.k; ++t) {
        std::uniform_int_distribution<std::size_t> pick(t, m - 1);
        std::swap(idx[t], idx[pick(rng)]);
        a.z[idx[t]] = 1;
      }
      break;
    }
  }
  return a;
}

/// E_i = sum_j W_ij Z_j, accumulated in row order.
inline ExposureProfile linear_exposure(const BipartiteGraph& graph, const Assignment& assignment) {
  if (assignment.size() != graph.m_diversion()) {
    throw DataError("assignment has length " + std::to_string(assignment.size()) + ", graph has M=" +
                    std::to_string(graph.m_diversion()));
  }
  ExposureProfile out{std::vector<double>(graph.n_outcome(), 0.0)};
  for (std::size_t i = 0; i < graph.n_outcome(); ++i) {
    double s = 0.0;
    for (const Edge& e : graph.row(i))
      if (assignment.z[e.diversion]) s += e.weight;
    out.e[i] = s;
  }
  return out;
}

/// Reads `diversion_id,p` aligned to the graph's dense diversion ids.
inline std::vector<double> load_probability_file(std::istream& in, const std::vector<std::string>& diversion_ids) {
  auto rows = csv::read_table(in, {"diversion_id", "p"});
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < diversion_ids.size(); ++j) index.emplace(diversion_ids[j], j);
  std::vector<double> p(diversion_ids.size(), -1.0);
  for (const auto& row : rows) {
    auto it = index.find(row.fields[0]);
    if (it == index.end()) throw ParseError(row.line, "unknown diversion_id '" + row.fields[0] + "'");
    double v = csv::parse_double(row.fields[1], row.line, "probability");
    if (!(v > 0.0 && v < 1.0)) throw ValidationError("line " + std::to_string(row.line) + ": p must lie in (0,1)");
    if (p[it->second] >= 0.0) throw ValidationError("line " + std::to_string(row.line) + ": duplicate diversion_id");
    p[it->second] = v;
  }
  for (std::size_t j = 0; j < p.size(); ++j)
    if (p[j] < 0.0) throw ValidationError("probability file: no entry for diversion_id '" + diversion_ids[j] + "'");
  return p;
}

/// Reads `diversion_id,z`.
inline Assignment load_assignment_file(std::istream& in, const std::vector<std::string>& diversion_ids) {
  auto rows = csv::read_table(in, {"diversion_id", "z"});
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t j = 0; j < diversion_ids.size(); ++j) index.emplace(diversion_ids[j], j);
  Assignment a{std::vector<std::uint8_t>(diversion_ids.size(), 0)};
  std::vector<bool> seen(diversion_ids.size(), false);
  for (const auto& row : rows) {
    auto it = index.find(row.fields[0]);
    if (it == index.end()) throw ParseError(row.line, "unknown diversion_id '" + row.fields[0] + "'");
    if (row.fields[1] != "0" && row.fields[1] != "1") throw ParseError(row.line, "z must be 0 or 1");
    if (seen[it->second]) throw ValidationError("line " + std::to_string(row.line) + ": duplicate diversion_id");
    seen[it->second] = true;
    a.z[it->second] = row.fields[1] == "1" ? 1 : 0;
  }
  for (std::size_t j = 0; j < seen.size(); ++j)
    if (!seen[j]) throw ValidationError("assignment file: no entry for diversion_id '" + diversion_ids[j] + "'");
  return a;
}

}  // namespace bipgps
