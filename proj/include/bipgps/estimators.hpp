#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "bipgps/csv.hpp"
#include "bipgps/error.hpp"
#include "bipgps/gps.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/numerics.hpp"

namespace bipgps {

inline constexpr double kTrimFloor = 1e-6;

/// Observation triples (Y_i, E_i, W_i) with the observed score r(E_i, W_i).
/// `unit` indexes graph rows and GPS table entries; resampled datasets repeat
/// units and keep their original rows and scores.
struct Dataset {
  std::shared_ptr<const BipartiteGraph> graph;
  std::shared_ptr<const GpsTable> gps;
  std::vector<std::size_t> unit;
  std::vector<double> y;
  std::vector<double> e;
  std::vector<double> r_obs;
  std::vector<std::string> warnings;

  std::size_t size() const { return unit.size(); }
  const Bucketing& bucketing() const { return gps->bucketing(); }
  bool at_level(std::size_t k, double level) const { return bucketing().same(e[k], level); }
  double degree(std::size_t k) const { return static_cast<double>(graph->degree(unit[k])); }
};

/// Builds a dataset over every outcome unit of the graph. Isolated units are
/// dropped with a warning: their exposure is constant so positivity fails.
inline Dataset make_dataset(std::shared_ptr<const BipartiteGraph> graph, std::shared_ptr<const GpsTable> gps,
                            std::span<const double> y, std::span<const double> e) {
  if (!graph || !gps) throw ConfigError("dataset: graph and GPS table are required");
  const std::size_t n = graph->n_outcome();
  if (y.size() != n || e.size() != n || gps->size() != n) {
    throw DataError("dataset: outcome, exposure and GPS lengths must equal N=" + std::to_string(n));
  }
  Dataset d;
  d.graph = std::move(graph);
  d.gps = std::move(gps);
  std::size_t isolated = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[i]) || !std::isfinite(e[i])) {
      throw DataError("dataset: non-finite outcome or exposure for outcome unit " + std::to_string(i));
    }
    if (d.graph->degree(i) == 0) {
      ++isolated;
      continue;
    }
    d.unit.push_back(i);
    d.y.push_back(y[i]);
    d.e.push_back(e[i]);
    d.r_obs.push_back(d.gps->probability(i, e[i]));
  }
  if (isolated > 0) {
    d.warnings.push_back(std::to_string(isolated) + " isolated outcome unit(s) excluded from estimation");
  }
  if (d.unit.empty()) throw DataError("dataset: no outcome unit has a diversion neighbor");
  return d;
}

/// Rows `pick` of the dataset, in that order.
inline Dataset subset(const Dataset& d, std::span<const std::size_t> pick) {
  Dataset out;
  out.graph = d.graph;
  out.gps = d.gps;
  out.unit.reserve(pick.size());
  out.y.reserve(pick.size());
  out.e.reserve(pick.size());
  out.r_obs.reserve(pick.size());
  for (std::size_t k : pick) {
    out.unit.push_back(d.unit.at(k));
    out.y.push_back(d.y[k]);
    out.e.push_back(d.e[k]);
    out.r_obs.push_back(d.r_obs[k]);
  }
  return out;
}

struct Estimate {
  double value = 0.0;
  std::vector<std::string> warnings;
};

// ---------------------------------------------------------------------------
// Naive estimators

inline double naive_mean(const Dataset& d, double level) {
  std::vector<double> hit;
  for (std::size_t k = 0; k < d.size(); ++k)
    if (d.at_level(k, level)) hit.push_back(d.y[k]);
  if (hit.empty()) throw DataError("no observations at exposure level " + csv::format_double(level));
  return stable_mean(hit);
}

/// Slope of the OLS regression of Y on (1, E).
inline double naive_ols(const Dataset& d) {
  const double n = static_cast<double>(d.size());
  double me = stable_mean(d.e), my = stable_mean(d.y);
  std::vector<double> sxy(d.size()), sxx(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    sxy[k] = (d.e[k] - me) * (d.y[k] - my);
    sxx[k] = (d.e[k] - me) * (d.e[k] - me);
  }
  double vxx = stable_sum(sxx);
  if (!(vxx > 1e-12 * n)) throw DataError("naive regression: exposure is constant across units");
  return stable_sum(sxy) / vxx;
}

// ---------------------------------------------------------------------------
// Horvitz-Thompson

inline Estimate ht_estimate(const Dataset& d, double level) {
  Estimate out;
  std::vector<double> terms(d.size(), 0.0);
  std::size_t floored = 0;
  for (std::size_t k = 0; k < d.size(); ++k) {
    if (!d.at_level(k, level)) continue;
    double r = d.r_obs[k];
    if (r < kTrimFloor) {
      r = kTrimFloor;
      ++floored;
    }
    terms[k] = d.y[k] / r;
  }
  out.value = stable_sum(terms) / static_cast<double>(d.size());
  if (floored > 0) {
    out.warnings.push_back(std::to_string(floored) + " propensity score(s) floored at 1e-6 at level " +
                           csv::format_double(level));
  }
  return out;
}

/// Ratio-normalized HT written as a weighted regression: columns
/// D(e_r)/sqrt(r), target Y/sqrt(r), no intercept.
struct HtRegression {
  std::vector<double> grid;
  std::vector<double> beta;
  DesignMatrix phi;
  Eigen::VectorXd target;
  LinearFit fit;
  std::vector<std::string> warnings;
};

inline HtRegression ht_weighted_regression(const Dataset& d, const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("weighted regression: empty grid");
  HtRegression out;
  out.grid = grid;
  const auto n = static_cast<Eigen::Index>(d.size());
  const auto q = static_cast<Eigen::Index>(grid.size());
  out.phi.x = Eigen::MatrixXd::Zero(n, q);
  out.target.resize(n);
  std::size_t floored = 0;
  for (Eigen::Index g = 0; g < q; ++g) {
    out.phi.labels.push_back("D(" + csv::format_double(grid[static_cast<std::size_t>(g)]) + ")");
    for (std::size_t k = 0; k < d.size(); ++k) {
      if (d.gps->probability(d.unit[k], grid[static_cast<std::size_t>(g)]) <= 0.0) {
        throw DataError("weighted regression: outcome unit " + std::to_string(d.unit[k]) +
                        " cannot reach exposure level " + csv::format_double(grid[static_cast<std::size_t>(g)]));
      }
    }
  }
  for (std::size_t k = 0; k < d.size(); ++k) {
    double r = d.r_obs[k];
    if (r < kTrimFloor) {
      r = kTrimFloor;
      ++floored;
    }
    const double s = std::sqrt(r);
    out.target[static_cast<Eigen::Index>(k)] = d.y[k] / s;
    for (Eigen::Index g = 0; g < q; ++g)
      if (d.at_level(k, grid[static_cast<std::size_t>(g)])) out.phi.x(static_cast<Eigen::Index>(k), g) = 1.0 / s;
  }
  for (Eigen::Index g = 0; g < q; ++g) {
    if (out.phi.x.col(g).squaredNorm() == 0.0) {
      throw DataError("weighted regression: no observations at exposure level " +
                      csv::format_double(grid[static_cast<std::size_t>(g)]));
    }
  }
  out.fit = ols(out.phi, out.target);
  out.beta.assign(out.fit.coef.data(), out.fit.coef.data() + q);
  if (floored > 0) out.warnings.push_back(std::to_string(floored) + " propensity score(s) floored at 1e-6");
  return out;
}

// ---------------------------------------------------------------------------
// Outcome-model surfaces beta(e, r)

namespace detail {

/// Merges sorted values into clusters; atoms chain within the tolerance,
/// bins use bin membership.
class AxisKeys {
 public:
  AxisKeys(const Bucketing& b, std::vector<double> values) : bucketing_(b) {
    std::sort(values.begin(), values.end());
    for (double v : values) {
      if (bucketing_.is_atoms()) {
        if (!lo_.empty() && v - hi_.back() <= bucketing_.tolerance()) {
          hi_.back() = v;
          continue;
        }
        lo_.push_back(v);
        hi_.push_back(v);
      } else {
        double rep = bucketing_.representative(v);
        if (lo_.empty() || lo_.back() != rep) {
          lo_.push_back(rep);
          hi_.push_back(rep);
        }
      }
    }
  }

  std::optional<std::size_t> key(double v) const {
    if (bucketing_.is_atoms()) {
      double tol = bucketing_.tolerance();
      auto it = std::lower_bound(hi_.begin(), hi_.end(), v - tol);
      if (it == hi_.end()) return std::nullopt;
      auto k = static_cast<std::size_t>(it - hi_.begin());
      if (v >= lo_[k] - tol) return k;
      return std::nullopt;
    }
    if (!bucketing_.in_range(v)) return std::nullopt;
    double rep = bucketing_.representative(v);
    auto it = std::lower_bound(lo_.begin(), lo_.end(), rep);
    if (it != lo_.end() && *it == rep) return static_cast<std::size_t>(it - lo_.begin());
    return std::nullopt;
  }

  double representative(std::size_t k) const { return lo_[k]; }
  std::size_t size() const { return lo_.size(); }

 private:
  Bucketing bucketing_;
  std::vector<double> lo_, hi_;
};

}  // namespace detail

/// Mean outcome per (exposure bucket, score bucket) cell.
class CellTable {
 public:
  struct Cell {
    double e;
    double r;
    double mean;
    std::size_t count;
  };

  CellTable(Bucketing e_bucketing, Bucketing r_bucketing, std::vector<Cell> cells)
      : e_bucketing_(std::move(e_bucketing)), r_bucketing_(std::move(r_bucketing)), cells_(std::move(cells)) {
    std::vector<double> es, rs;
    for (const auto& c : cells_) {
      es.push_back(c.e);
      rs.push_back(c.r);
    }
    e_keys_.emplace(e_bucketing_, es);
    r_keys_.emplace(r_bucketing_, rs);
    for (std::size_t c = 0; c < cells_.size(); ++c) {
      auto key = std::make_pair(*e_keys_->key(cells_[c].e), *r_keys_->key(cells_[c].r));
      if (!index_.emplace(key, c).second) throw DataError("cell table: two cells share a bucket");
    }
  }

  std::optional<double> at(double e, double r) const {
    auto ke = e_keys_->key(e);
    auto kr = r_keys_->key(r);
    if (!ke || !kr) return std::nullopt;
    auto it = index_.find({*ke, *kr});
    if (it == index_.end()) return std::nullopt;
    return cells_[it->second].mean;
  }

  const std::vector<Cell>& cells() const { return cells_; }

 private:
  Bucketing e_bucketing_, r_bucketing_;
  std::vector<Cell> cells_;
  std::optional<detail::AxisKeys> e_keys_, r_keys_;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index_;
};

/// beta(e, r) = c0 + c1 e + c2 e^2 + c3 r + c4 r^2 + c5 e r.
struct PolySurface {
  Eigen::VectorXd coef;
  double at(double e, double r) const {
    return coef[0] + coef[1] * e + coef[2] * e * e + coef[3] * r + coef[4] * r * r + coef[5] * e * r;
  }
};

struct KernelSurface {
  KernelFit fit;
  double at(double e, double r) const { return krr_predict(fit, {e, r}); }
};

class BetaSurface {
 public:
  using Repr = std::variant<CellTable, PolySurface, KernelSurface>;

  explicit BetaSurface(Repr repr) : repr_(std::move(repr)) {}

  /// Empty for a cell-table hole; parametric surfaces always evaluate.
  std::optional<double> at(double e, double r) const {
    return std::visit([&](const auto& s) -> std::optional<double> { return s.at(e, r); }, repr_);
  }

  const char* kind() const {
    switch (repr_.index()) {
      case 0: return "cell-table";
      case 1: return "polynomial";
      default: return "kernel";
    }
  }

  const Repr& repr() const { return repr_; }

 private:
  Repr repr_;
};

inline BetaSurface beta_cell_means(const Dataset& d, const Bucketing& e_bucketing, const Bucketing& r_bucketing) {
  detail::AxisKeys ek(e_bucketing, d.e), rk(r_bucketing, d.r_obs);
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> groups;
  for (std::size_t k = 0; k < d.size(); ++k) groups[{*ek.key(d.e[k]), *rk.key(d.r_obs[k])}].push_back(d.y[k]);
  std::vector<CellTable::Cell> cells;
  for (auto& [key, ys] : groups) {
    std::sort(ys.begin(), ys.end());
    cells.push_back({ek.representative(key.first), rk.representative(key.second), stable_mean(ys), ys.size()});
  }
  return BetaSurface(CellTable(e_bucketing, r_bucketing, std::move(cells)));
}

inline BetaSurface beta_cell_means(const Dataset& d) {
  return beta_cell_means(d, d.bucketing(), Bucketing::atoms());
}

inline BetaSurface beta_poly_fit(const Dataset& d) {
  const auto n = static_cast<Eigen::Index>(d.size());
  if (n < 6) throw DataError("polynomial outcome model needs at least 6 observations");
  DesignMatrix x{Eigen::MatrixXd(n, 6), {"1", "E", "E^2", "R", "R^2", "E*R"}};
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double e = d.e[static_cast<std::size_t>(k)], r = d.r_obs[static_cast<std::size_t>(k)];
    x.x.row(k) << 1.0, e, e * e, r, r * r, e * r;
    y[k] = d.y[static_cast<std::size_t>(k)];
  }
  return BetaSurface(PolySurface{ols(x, y).coef});
}

inline BetaSurface beta_krr_fit(const Dataset& d, const KrrParams& params = {}) {
  std::vector<Point2> in(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) in[k] = {d.e[k], d.r_obs[k]};
  return BetaSurface(KernelSurface{krr_fit(in, d.y, params)});
}

// ---------------------------------------------------------------------------
// Dose response

struct DoseResponseCurve {
  std::vector<double> grid;
  std::vector<double> mu_hat;
  std::string estimator;
};

inline std::vector<double> default_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 10; ++k) g.push_back(k / 10.0);
  return g;
}

inline void validate_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("grid: no exposure levels");
  for (std::size_t k = 0; k < grid.size(); ++k) {
    if (!std::isfinite(grid[k])) throw ConfigError("grid: non-finite exposure level");
    if (k > 0 && !(grid[k] > grid[k - 1])) throw ConfigError("grid: levels must be strictly increasing");
  }
}

/// Imputed scores r(e, W_i) over a fixed population, grouped by value so a
/// surface is evaluated once per distinct score.
struct ImputedScores {
  std::vector<double> grid;
  std::vector<std::vector<std::pair<double, std::size_t>>> groups;  // per level: (score, units)
  std::size_t n_units = 0;
};

inline ImputedScores impute_scores(const GpsTable& gps, std::span<const std::size_t> units, std::vector<double> grid) {
  validate_grid(grid);
  if (units.empty()) throw DataError("dose response: empty population");
  ImputedScores out;
  out.n_units = units.size();
  for (double e : grid) {
    std::vector<double> r(units.size());
    for (std::size_t k = 0; k < units.size(); ++k) r[k] = gps.probability(units[k], e);
    std::sort(r.begin(), r.end());
    std::vector<std::pair<double, std::size_t>> g;
    for (double v : r) {
      if (!g.empty() && g.back().first == v) {
        ++g.back().second;
      } else {
        g.emplace_back(v, 1);
      }
    }
    out.groups.push_back(std::move(g));
  }
  out.grid = std::move(grid);
  return out;
}

/// mu(e) = N^-1 sum_i beta(e, r(e, W_i)).
inline DoseResponseCurve dose_response(const BetaSurface& surface, const ImputedScores& scores,
                                       std::string tag = "gps") {
  DoseResponseCurve c{scores.grid, {}, std::move(tag)};
  std::string holes;
  std::size_t n_holes = 0;
  for (std::size_t g = 0; g < scores.grid.size(); ++g) {
    std::vector<double> terms;
    for (const auto& [r, count] : scores.groups[g]) {
      auto b = surface.at(scores.grid[g], r);
      if (!b) {
        if (n_holes++ < 20) holes += " (" + csv::format_double(scores.grid[g]) + ", " + csv::format_double(r) + ")";
        continue;
      }
      terms.push_back(*b * static_cast<double>(count));
    }
    c.mu_hat.push_back(stable_sum(terms) / static_cast<double>(scores.n_units));
  }
  if (n_holes > 0) {
    throw DataError("dose response: outcome model has no cell for " + std::to_string(n_holes) +
                    " needed (e, r) pair(s):" + holes + (n_holes > 20 ? " ..." : ""));
  }
  return c;
}

inline DoseResponseCurve dose_response(const BetaSurface& surface, const GpsTable& gps,
                                       std::span<const std::size_t> units, std::vector<double> grid,
                                       std::string tag = "gps") {
  return dose_response(surface, impute_scores(gps, units, std::move(grid)), std::move(tag));
}

/// Optional smoothing: least-squares line through the imputed curve.
inline DoseResponseCurve smooth_linear(const DoseResponseCurve& c) {
  if (c.grid.size() < 2) throw DataError("smoothing needs at least two grid levels");
  const auto n = static_cast<Eigen::Index>(c.grid.size());
  DesignMatrix x{Eigen::MatrixXd(n, 2), {"1", "e"}};
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    x.x.row(k) << 1.0, c.grid[static_cast<std::size_t>(k)];
    y[k] = c.mu_hat[static_cast<std::size_t>(k)];
  }
  auto fit = ols(x, y);
  DoseResponseCurve out{c.grid, {}, c.estimator + "+linear"};
  for (double e : c.grid) out.mu_hat.push_back(fit.coef[0] + fit.coef[1] * e);
  return out;
}

inline double ate(const DoseResponseCurve& c) {
  auto find = [&](double level) -> double {
    for (std::size_t k = 0; k < c.grid.size(); ++k)
      if (std::abs(c.grid[k] - level) <= 1e-12) return c.mu_hat[k];
    throw ConfigError("ate: grid does not contain exposure level " + csv::format_double(level));
  };
  return find(1.0) - find(0.0);
}

// ---------------------------------------------------------------------------
// Stratification on moments of the exposure distribution

enum class StrataMoment { mean, variance };

struct StrataSpec {
  StrataMoment moment = StrataMoment::variance;
  std::size_t groups = 10;  // quantile groups (deciles by default)
};

/// Stratum label per dataset row. Units with equal moments (within 1e-9)
/// always share a stratum, so heavy ties yield fewer strata than requested.
inline std::vector<std::size_t> strata_labels(const Dataset& d, const StrataSpec& spec) {
  if (spec.groups < 1) throw ConfigError("strata: need at least one group");
  std::vector<double> v(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    const auto& dist = d.gps->distribution(d.unit[k]);
    v[k] = spec.moment == StrataMoment::mean ? dist.mean() : dist.variance();
  }
  // Snap near-equal values onto a shared representative.
  std::vector<double> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> reps;
  for (double x : sorted)
    if (reps.empty() || x - reps.back() > kAtomTolerance) reps.push_back(x);
  auto snap = [&](double x) {
    auto it = std::upper_bound(reps.begin(), reps.end(), x + kAtomTolerance);
    return *std::prev(it);
  };
  for (double& x : sorted) x = snap(x);
  std::vector<double> cuts;
  for (std::size_t g = 1; g < spec.groups; ++g)
    cuts.push_back(quantile_sorted(sorted, static_cast<double>(g) / static_cast<double>(spec.groups)));
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<std::size_t> label(d.size());
  for (std::size_t k = 0; k < d.size(); ++k) {
    double x = snap(v[k]);
    label[k] = static_cast<std::size_t>(std::lower_bound(cuts.begin(), cuts.end(), x) - cuts.begin());
  }
  return label;
}

/// Within each stratum average Y over units at level e; pool by population share.
inline double stratified_estimate(const Dataset& d, const StrataSpec& spec, double level) {
  auto label = strata_labels(d, spec);
  std::map<std::size_t, std::pair<std::size_t, std::vector<double>>> strata;  // units, outcomes at level
  for (std::size_t k = 0; k < d.size(); ++k) {
    auto& s = strata[label[k]];
    ++s.first;
    if (d.at_level(k, level)) s.second.push_back(d.y[k]);
  }
  std::vector<double> terms;
  std::string empty;
  for (auto& [id, s] : strata) {
    if (s.second.empty()) {
      empty += (empty.empty() ? "" : ", ") + std::to_string(id);
      continue;
    }
    terms.push_back(static_cast<double>(s.first) / static_cast<double>(d.size()) * stable_mean(s.second));
  }
  if (!empty.empty()) {
    throw DataError("stratified estimate: no observations at exposure level " + csv::format_double(level) +
                    " in stratum " + empty);
  }
  return stable_sum(terms);
}

// ---------------------------------------------------------------------------
// Structural regression on degree-scaled exposure

/// OLS of Y on {1, m_i E_i}; the ATE over a population is slope * mean(m_i).
inline LinearFit degree_ols_fit(const Dataset& d) {
  const auto n = static_cast<Eigen::Index>(d.size());
  DesignMatrix x{Eigen::MatrixXd(n, 2), {"1", "m*E"}};
  Eigen::VectorXd y(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    auto u = static_cast<std::size_t>(k);
    x.x.row(k) << 1.0, d.degree(u) * d.e[u];
    y[k] = d.y[u];
  }
  return ols(x, y);
}

inline double mean_degree(const BipartiteGraph& g, std::span<const std::size_t> units) {
  std::vector<double> m(units.size());
  for (std::size_t k = 0; k < units.size(); ++k) m[k] = static_cast<double>(g.degree(units[k]));
  return stable_mean(m);
}

// ---------------------------------------------------------------------------
// Named estimator pipelines (used by bootstrap and simulations)

enum class EstimatorKind {
  naive_mean,
  naive_ols,
  ht,
  ht_ratio,
  gps_cells,
  gps_poly,
  gps_krr,
  stratified,
  degree_ols
};

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::naive_mean: return "naive_mean";
    case EstimatorKind::naive_ols: return "naive_ols";
    case EstimatorKind::ht: return "ht";
    case EstimatorKind::ht_ratio: return "ht_ratio";
    case EstimatorKind::gps_cells: return "gps_cells";
    case EstimatorKind::gps_poly: return "gps_poly";
    case EstimatorKind::gps_krr: return "gps_krr";
    case EstimatorKind::stratified: return "stratified";
    case EstimatorKind::degree_ols: return "degree_ols";
  }
  return "?";
}

inline EstimatorKind parse_estimator(const std::string& s) {
  for (auto k : {EstimatorKind::naive_mean, EstimatorKind::naive_ols, EstimatorKind::ht, EstimatorKind::ht_ratio,
                 EstimatorKind::gps_cells, EstimatorKind::gps_poly, EstimatorKind::gps_krr, EstimatorKind::stratified,
                 EstimatorKind::degree_ols})
    if (s == to_string(k)) return k;
  throw ConfigError("unknown estimator '" + s + "'");
}

struct EstimatorSpec {
  EstimatorKind kind = EstimatorKind::naive_ols;
  KrrParams krr;
  StrataSpec strata;
  std::optional<Bucketing> score_bucketing;  // cell tables; atoms when empty
  bool smooth = false;                       // linear smoothing of the imputed curve
  std::vector<double> grid{0.0, 1.0};        // imputation grid for the ATE
};

/// Population over which outcome models are averaged. Bootstrap replicates
/// refit the model on resampled rows but keep imputing over this population.
class Population {
 public:
  Population(std::shared_ptr<const BipartiteGraph> graph, std::shared_ptr<const GpsTable> gps,
             std::vector<std::size_t> units)
      : graph_(std::move(graph)), gps_(std::move(gps)), units_(std::move(units)) {
    if (units_.empty()) throw DataError("population: no units");
  }

  static Population of(const Dataset& d) { return Population(d.graph, d.gps, d.unit); }

  std::span<const std::size_t> units() const { return units_; }
  double mean_degree() const { return bipgps::mean_degree(*graph_, units_); }

  const ImputedScores& scores(const std::vector<double>& grid) const {
    for (const auto& s : cache_)
      if (s.grid == grid) return s;
    cache_.push_back(impute_scores(*gps_, units_, grid));
    return cache_.back();
  }

  /// Fills the cache so later concurrent reads never mutate it.
  void prepare(const std::vector<double>& grid) const { (void)scores(grid); }

 private:
  std::shared_ptr<const BipartiteGraph> graph_;
  std::shared_ptr<const GpsTable> gps_;
  std::vector<std::size_t> units_;
  mutable std::deque<ImputedScores> cache_;  // stable references on growth
};

inline void prepare_population(const EstimatorSpec& spec, const Population& pop) {
  switch (spec.kind) {
    case EstimatorKind::gps_cells:
    case EstimatorKind::gps_poly:
    case EstimatorKind::gps_krr: pop.prepare(spec.grid); break;
    default: break;
  }
}

/// Point estimate of mu(1) - mu(0) for the named pipeline.
inline Estimate estimate_ate(const EstimatorSpec& spec, const Dataset& d, const Population& pop) {
  Estimate out;
  auto from_surface = [&](const BetaSurface& s) {
    auto curve = dose_response(s, pop.scores(spec.grid), to_string(spec.kind));
    if (spec.smooth) curve = smooth_linear(curve);
    return ate(curve);
  };
  switch (spec.kind) {
    case EstimatorKind::naive_mean: out.value = naive_mean(d, 1.0) - naive_mean(d, 0.0); break;
    case EstimatorKind::naive_ols: out.value = naive_ols(d); break;
    case EstimatorKind::ht: {
      auto hi = ht_estimate(d, 1.0), lo = ht_estimate(d, 0.0);
      out.value = hi.value - lo.value;
      out.warnings = hi.warnings;
      out.warnings.insert(out.warnings.end(), lo.warnings.begin(), lo.warnings.end());
      break;
    }
    case EstimatorKind::ht_ratio: {
      auto reg = ht_weighted_regression(d, {0.0, 1.0});
      out.value = reg.beta[1] - reg.beta[0];
      out.warnings = reg.warnings;
      break;
    }
    case EstimatorKind::gps_cells:
      out.value = from_surface(beta_cell_means(d, d.bucketing(), spec.score_bucketing.value_or(Bucketing::atoms())));
      break;
    case EstimatorKind::gps_poly: out.value = from_surface(beta_poly_fit(d)); break;
    case EstimatorKind::gps_krr: out.value = from_surface(beta_krr_fit(d, spec.krr)); break;
    case EstimatorKind::stratified:
      out.value = stratified_estimate(d, spec.strata, 1.0) - stratified_estimate(d, spec.strata, 0.0);
      break;
    case EstimatorKind::degree_ols: out.value = degree_ols_fit(d).coef[1] * pop.mean_degree(); break;
  }
  return out;
}

inline Estimate estimate_ate(const EstimatorSpec& spec, const Dataset& d) {
  return estimate_ate(spec, d, Population::of(d));
}

}  // namespace bipgps
