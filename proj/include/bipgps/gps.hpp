#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bipgps/csv.hpp"
#include "bipgps/design.hpp"
#include "bipgps/error.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/rng.hpp"

namespace bipgps {

inline constexpr double kAtomTolerance = 1e-9;
inline constexpr std::size_t kEnumerationCap = 20;
inline constexpr std::size_t kDefaultDraws = 10000;
inline constexpr std::size_t kDefaultBins = 20;

/// How exposure levels are grouped: merged atoms or equal/explicit-width bins.
class Bucketing {
 public:
  static Bucketing atoms(double tolerance = kAtomTolerance) {
    if (!(tolerance > 0.0)) throw ConfigError("bucketing: atom tolerance must be positive");
    Bucketing b;
    b.tolerance_ = tolerance;
    return b;
  }

  static Bucketing bins(std::vector<double> edges) {
    if (edges.size() < 2) throw ConfigError("bucketing: need at least two bin edges");
    for (std::size_t k = 1; k < edges.size(); ++k)
      if (!(edges[k] > edges[k - 1])) throw ConfigError("bucketing: bin edges must be strictly increasing");
    Bucketing b;
    b.edges_ = std::move(edges);
    return b;
  }

  static Bucketing equal_width(std::size_t count, double lo = 0.0, double hi = 1.0) {
    if (count == 0 || !(hi > lo)) throw ConfigError("bucketing: need a positive bin count over a nonempty range");
    std::vector<double> edges(count + 1);
    for (std::size_t k = 0; k <= count; ++k)
      edges[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count);
    edges.back() = hi;
    return bins(std::move(edges));
  }

  bool is_atoms() const { return edges_.empty(); }
  double tolerance() const { return tolerance_; }
  std::span<const double> edges() const { return edges_; }
  std::size_t bin_count() const { return edges_.empty() ? 0 : edges_.size() - 1; }

  bool in_range(double x) const {
    if (!std::isfinite(x)) return false;
    if (is_atoms()) return true;
    return x >= edges_.front() - kAtomTolerance && x <= edges_.back() + kAtomTolerance;
  }

  /// Bin index of x; the last bin is closed on the right.
  std::size_t bin_of(double x) const {
    if (is_atoms()) throw ConfigError("bucketing: bin_of on atom bucketing");
    if (!in_range(x)) {
      throw DataError("exposure " + csv::format_double(x) + " outside the bucketing range [" +
                      csv::format_double(edges_.front()) + ", " + csv::format_double(edges_.back()) + "]");
    }
    auto it = std::upper_bound(edges_.begin(), edges_.end(), x);
    std::size_t k = it == edges_.begin() ? 0 : static_cast<std::size_t>(it - edges_.begin()) - 1;
    return std::min(k, bin_count() - 1);
  }

  /// Canonical level for x: itself for atoms, the bin midpoint for bins.
  double representative(double x) const {
    if (is_atoms()) return x;
    std::size_t k = bin_of(x);
    return 0.5 * (edges_[k] + edges_[k + 1]);
  }

  bool same(double a, double b) const {
    if (is_atoms()) return std::abs(a - b) <= tolerance_;
    return bin_of(a) == bin_of(b);
  }

 private:
  Bucketing() = default;
  double tolerance_ = kAtomTolerance;
  std::vector<double> edges_;
};

/// Per-unit exposure law: representative levels (sorted) with their masses.
struct ExposureDistribution {
  std::vector<double> level;
  std::vector<double> prob;

  double total() const {
    double s = 0.0;
    for (double p : prob) s += p;
    return s;
  }
  double mean() const {
    double s = 0.0;
    for (std::size_t k = 0; k < level.size(); ++k) s += level[k] * prob[k];
    return s;
  }
  double variance() const {
    double mu = mean(), s = 0.0;
    for (std::size_t k = 0; k < level.size(); ++k) s += (level[k] - mu) * (level[k] - mu) * prob[k];
    return s;
  }
};

namespace detail {

// Merge (level, mass) pairs whose levels lie within `tol` of a cluster's first level.
inline ExposureDistribution merge_atoms(std::vector<std::pair<double, double>> mass, double tol) {
  std::sort(mass.begin(), mass.end());
  ExposureDistribution d;
  for (const auto& [lv, p] : mass) {
    if (!d.level.empty() && lv - d.level.back() <= tol) {
      d.prob.back() += p;
    } else {
      d.level.push_back(lv);
      d.prob.push_back(p);
    }
  }
  return d;
}

inline ExposureDistribution rebucket(const ExposureDistribution& atoms, const Bucketing& b) {
  if (b.is_atoms()) return atoms;
  std::vector<double> mass(b.bin_count(), 0.0);
  for (std::size_t k = 0; k < atoms.level.size(); ++k) mass[b.bin_of(atoms.level[k])] += atoms.prob[k];
  ExposureDistribution d;
  for (std::size_t k = 0; k < mass.size(); ++k) {
    if (mass[k] <= 0.0) continue;
    d.level.push_back(0.5 * (b.edges()[k] + b.edges()[k + 1]));
    d.prob.push_back(mass[k]);
  }
  return d;
}

}  // namespace detail

/// Exact exposure law of unit i under a Bernoulli design, by enumerating all
/// 2^m neighbor assignments.
inline ExposureDistribution exact_gps(const BipartiteGraph& graph, const AssignmentDesign& design, std::size_t i,
                                      std::size_t cap = kEnumerationCap) {
  if (!design.is_bernoulli()) {
    throw ConfigError("exact_gps requires a Bernoulli design; use mc_gps for completely randomized designs");
  }
  design.validate(graph.m_diversion());
  auto row = row_weights(graph, i);
  const std::size_t m = row.size();
  if (m > cap) {
    throw ConfigError("exact_gps: unit " + std::to_string(i) + " has degree " + std::to_string(m) +
                      " above the enumeration cap " + std::to_string(cap) + "; use mc_gps");
  }
  std::vector<double> p(m);
  for (std::size_t k = 0; k < m; ++k) p[k] = design.probability(row[k].diversion, graph.m_diversion());
  const std::uint64_t total = std::uint64_t{1} << m;
  std::vector<std::pair<double, double>> mass;
  mass.reserve(total);
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double e = 0.0, pr = 1.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (mask >> k & 1U) {
        e += row[k].weight;
        pr *= p[k];
      } else {
        pr *= 1.0 - p[k];
      }
    }
    mass.emplace_back(e, pr);
  }
  return detail::merge_atoms(std::move(mass), kAtomTolerance);
}

enum class GpsMode { exact, monte_carlo, product_form };

inline const char* to_string(GpsMode m) {
  switch (m) {
    case GpsMode::exact: return "exact";
    case GpsMode::monte_carlo: return "monte-carlo";
    case GpsMode::product_form: return "product-form";
  }
  return "?";
}

/// Per-unit exposure distributions plus lookups r(e, W_i). Built once and
/// then only read.
class GpsTable {
 public:
  GpsTable(Bucketing bucketing, GpsMode mode, std::vector<ExposureDistribution> units, double hi)
      : bucketing_(std::move(bucketing)), mode_(mode), units_(std::move(units)), hi_(hi) {}

  const Bucketing& bucketing() const { return bucketing_; }
  GpsMode mode() const { return mode_; }
  std::size_t size() const { return units_.size(); }
  const ExposureDistribution& distribution(std::size_t i) const { return units_.at(i); }

  /// Mass of the atom/bin containing e; 0 when e carries no mass.
  double probability(std::size_t i, double e) const {
    if (i >= units_.size()) throw DataError("gps: outcome index " + std::to_string(i) + " out of range");
    check_range(e);
    const auto& d = units_[i];
    if (bucketing_.is_atoms()) {
      double tol = bucketing_.tolerance();
      auto it = std::lower_bound(d.level.begin(), d.level.end(), e - tol);
      double best = 0.0, gap = tol;
      bool hit = false;
      for (; it != d.level.end() && *it <= e + tol; ++it) {
        double g = std::abs(*it - e);
        if (!hit || g < gap) {
          best = d.prob[static_cast<std::size_t>(it - d.level.begin())];
          gap = g;
          hit = true;
        }
      }
      return best;
    }
    double rep = bucketing_.representative(e);
    auto it = std::lower_bound(d.level.begin(), d.level.end(), rep);
    if (it != d.level.end() && *it == rep) return d.prob[static_cast<std::size_t>(it - d.level.begin())];
    return 0.0;
  }

  /// Imputed scores r(e, W_i) for every unit at a fixed level.
  std::vector<double> imputed(double e) const {
    std::vector<double> out(units_.size());
    for (std::size_t i = 0; i < units_.size(); ++i) out[i] = probability(i, e);
    return out;
  }

  void check_range(double e) const {
    if (!std::isfinite(e) || e < -kAtomTolerance || e > hi_ + kAtomTolerance || !bucketing_.in_range(e)) {
      throw DataError("exposure level " + csv::format_double(e) + " outside the bucketing range [0, " +
                      csv::format_double(hi_) + "]");
    }
  }

 private:
  Bucketing bucketing_;
  GpsMode mode_;
  std::vector<ExposureDistribution> units_;
  double hi_;
};

/// r(e, W_i) lookup.
inline double gps_at(const GpsTable& table, std::size_t i, double e) { return table.probability(i, e); }

/// Exact table for every unit; optional re-bucketing into bins.
inline GpsTable exact_gps_table(const BipartiteGraph& graph, const AssignmentDesign& design,
                                const Bucketing& bucketing = Bucketing::atoms()) {
  std::vector<ExposureDistribution> units;
  units.reserve(graph.n_outcome());
  for (std::size_t i = 0; i < graph.n_outcome(); ++i)
    units.push_back(detail::rebucket(exact_gps(graph, design, i), bucketing));
  return GpsTable(bucketing, GpsMode::exact, std::move(units), std::max(graph.max_row_sum(), 1.0));
}

/// Histogram approximation from n_draws simulated assignments.
inline GpsTable mc_gps(const BipartiteGraph& graph, const AssignmentDesign& design, const Bucketing& bucketing,
                       std::size_t n_draws, Rng& rng) {
  if (n_draws < 1) throw ConfigError("mc_gps: n_draws must be at least 1");
  const std::size_t n = graph.n_outcome();
  const double hi = std::max(graph.max_row_sum(), 1.0);
  std::vector<ExposureDistribution> units(n);
  if (bucketing.is_atoms()) {
    std::vector<std::vector<std::pair<double, std::size_t>>> hist(n);
    const double tol = bucketing.tolerance();
    for (std::size_t d = 0; d < n_draws; ++d) {
      auto e = linear_exposure(graph, draw_assignment(design, graph.m_diversion(), rng));
      for (std::size_t i = 0; i < n; ++i) {
        auto& h = hist[i];
        double x = e.e[i];
        auto it = std::lower_bound(h.begin(), h.end(), x - tol,
                                   [](const auto& a, double v) { return a.first < v; });
        if (it != h.end() && it->first <= x + tol) {
          ++it->second;
        } else {
          h.insert(it, {x, 1});
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [lv, c] : hist[i]) {
        units[i].level.push_back(lv);
        units[i].prob.push_back(static_cast<double>(c) / static_cast<double>(n_draws));
      }
    }
  } else {
    const std::size_t nb = bucketing.bin_count();
    std::vector<std::size_t> counts(n * nb, 0);
    for (std::size_t d = 0; d < n_draws; ++d) {
      auto e = linear_exposure(graph, draw_assignment(design, graph.m_diversion(), rng));
      for (std::size_t i = 0; i < n; ++i) ++counts[i * nb + bucketing.bin_of(e.e[i])];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < nb; ++k) {
        if (counts[i * nb + k] == 0) continue;
        units[i].level.push_back(0.5 * (bucketing.edges()[k] + bucketing.edges()[k + 1]));
        units[i].prob.push_back(static_cast<double>(counts[i * nb + k]) / static_cast<double>(n_draws));
      }
    }
  }
  return GpsTable(bucketing, GpsMode::monte_carlo, std::move(units), hi);
}

/// prod_{z_j=1} p_j * prod_{z_j=0} (1 - p_j).
inline double product_gps(std::span<const double> p, std::span<const std::uint8_t> z) {
  if (p.size() != z.size()) throw DataError("product_gps: probability and pattern lengths differ");
  double out = 1.0;
  for (std::size_t k = 0; k < p.size(); ++k) out *= z[k] ? p[k] : 1.0 - p[k];
  return out;
}

/// True when no two weights in the row coincide (within the atom tolerance),
/// so an exposure value identifies the neighbor assignment.
inline bool has_distinct_weights(std::span<const Edge> row) {
  std::vector<double> w;
  for (const Edge& e : row) w.push_back(e.weight);
  std::sort(w.begin(), w.end());
  for (std::size_t k = 1; k < w.size(); ++k)
    if (w[k] - w[k - 1] <= kAtomTolerance) return false;
  return true;
}

/// Product-form scores for an observed assignment: each unit gets atoms at 0,
/// at its observed exposure and at its row sum. Rows with tied weights fall
/// back to enumeration. Distributions in this mode are partial (they do not
/// sum to one).
inline GpsTable product_form_table(const BipartiteGraph& graph, const AssignmentDesign& design,
                                   const Assignment& observed) {
  if (!design.is_bernoulli()) throw ConfigError("product-form GPS needs a Bernoulli design");
  design.validate(graph.m_diversion());
  if (observed.size() != graph.m_diversion()) throw DataError("product-form GPS: assignment length mismatch");
  std::vector<ExposureDistribution> units(graph.n_outcome());
  for (std::size_t i = 0; i < graph.n_outcome(); ++i) {
    auto row = graph.row(i);
    if (!has_distinct_weights(row)) {
      units[i] = exact_gps(graph, design, i);
      continue;
    }
    std::vector<double> p;
    std::vector<std::uint8_t> z, none(row.size(), 0), all(row.size(), 1);
    double e = 0.0, total = 0.0;
    for (const Edge& ed : row) {
      p.push_back(design.probability(ed.diversion, graph.m_diversion()));
      z.push_back(observed.z[ed.diversion]);
      if (observed.z[ed.diversion]) e += ed.weight;
      total += ed.weight;
    }
    std::vector<std::pair<double, double>> mass{{0.0, product_gps(p, none)}};
    if (e > kAtomTolerance && total - e > kAtomTolerance) mass.emplace_back(e, product_gps(p, z));
    if (total > kAtomTolerance) mass.emplace_back(total, product_gps(p, all));
    units[i] = detail::merge_atoms(std::move(mass), kAtomTolerance);
  }
  return GpsTable(Bucketing::atoms(), GpsMode::product_form, std::move(units), std::max(graph.max_row_sum(), 1.0));
}

/// One score group of the balancing diagnostic.
struct BalancingGroup {
  double score = 0.0;        // r(e, W_i) shared by the group
  std::size_t units = 0;
  double frequency = 0.0;    // share of (draw, unit) pairs with E_i = e
  double band = 0.0;         // z_band standard errors of `frequency`
  bool ok = false;
};

/// Balancing property: among units with the same score r(e, W_i), the
/// indicator 1[E_i = e] must fire with frequency r. Groups units by score,
/// redraws assignments and compares. The standard error uses the spread of
/// the per-draw group frequencies, so correlation between units that share
/// diversion neighbors is accounted for.
inline std::vector<BalancingGroup> balancing_check(const BipartiteGraph& graph, const AssignmentDesign& design,
                                                   const GpsTable& table, double level, std::size_t n_draws,
                                                   Rng& rng, double z_band = 3.0) {
  if (n_draws < 2) throw ConfigError("balancing check: need at least two draws");
  const auto& b = table.bucketing();
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < graph.n_outcome(); ++i) {
    double r = table.probability(i, level);
    if (r > 0.0) scored.emplace_back(r, i);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::vector<std::size_t>> members;
  std::vector<double> scores;
  for (const auto& [r, i] : scored) {
    if (scores.empty() || std::abs(r - scores.back()) > kAtomTolerance) {
      scores.push_back(r);
      members.emplace_back();
    }
    members.back().push_back(i);
  }
  std::vector<double> sum(scores.size(), 0.0), sum_sq(scores.size(), 0.0);
  for (std::size_t d = 0; d < n_draws; ++d) {
    auto e = linear_exposure(graph, draw_assignment(design, graph.m_diversion(), rng));
    for (std::size_t g = 0; g < scores.size(); ++g) {
      std::size_t hit = 0;
      for (std::size_t i : members[g]) hit += b.same(e.e[i], level) ? 1 : 0;
      double f = static_cast<double>(hit) / static_cast<double>(members[g].size());
      sum[g] += f;
      sum_sq[g] += f * f;
    }
  }
  std::vector<BalancingGroup> out;
  const double nd = static_cast<double>(n_draws);
  for (std::size_t g = 0; g < scores.size(); ++g) {
    BalancingGroup row;
    row.score = scores[g];
    row.units = members[g].size();
    row.frequency = sum[g] / nd;
    double var = std::max(0.0, (sum_sq[g] - nd * row.frequency * row.frequency) / (nd - 1.0));
    row.band = z_band * std::sqrt(var / nd);
    row.ok = std::abs(row.frequency - row.score) <= row.band + 1e-12;
    out.push_back(row);
  }
  return out;
}

/// Columnar audit dump: one row per unit and atom/bin.
inline void write_gps_table(std::ostream& out, const GpsTable& table, const std::vector<std::string>& unit_ids) {
  const auto& b = table.bucketing();
  if (b.is_atoms()) {
    out << "outcome_id,level,probability\n";
  } else {
    out << "outcome_id,bin_lo,bin_hi,probability\n";
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    const auto& d = table.distribution(i);
    for (std::size_t k = 0; k < d.level.size(); ++k) {
      out << csv::quote(unit_ids.at(i)) << ',';
      if (b.is_atoms()) {
        out << csv::format_double(d.level[k]);
      } else {
        std::size_t bin = b.bin_of(d.level[k]);
        out << csv::format_double(b.edges()[bin]) << ',' << csv::format_double(b.edges()[bin + 1]);
      }
      out << ',' << csv::format_double(d.prob[k]) << '\n';
    }
  }
}

}  // namespace bipgps
