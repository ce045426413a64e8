#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/QR>

#include "bipgps/csv.hpp"
#include "bipgps/error.hpp"

namespace bipgps {

inline constexpr double kRankTolerance = 1e-10;

// ---------------------------------------------------------------------------
// Deterministic reductions

/// Compensated (Neumaier) sum in index order.
inline double stable_sum(std::span<const double> v) {
  double s = 0.0, c = 0.0;
  for (double x : v) {
    double t = s + x;
    if (std::abs(s) >= std::abs(x)) {
      c += (s - t) + x;
    } else {
      c += (x - t) + s;
    }
    s = t;
  }
  return s + c;
}

inline double stable_mean(std::span<const double> v) {
  if (v.empty()) throw DataError("mean of an empty sequence");
  return stable_sum(v) / static_cast<double>(v.size());
}

/// Sample variance with divisor n-1 (0 for a single value).
inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  double mu = stable_mean(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mu) * (v[i] - mu);
  return stable_sum(sq) / static_cast<double>(v.size() - 1);
}

/// Linear-interpolation quantile of the sorted sample (Hyndman-Fan type 7).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of an empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw ConfigError("quantile level must lie in [0,1]");
  double h = q * static_cast<double>(sorted.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(h));
  std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  return quantile_sorted(v, q);
}

/// Smallest value x with cumulative weight >= half the total.
inline double weighted_median(std::vector<std::pair<double, double>> value_weight) {
  if (value_weight.empty()) throw DataError("weighted median of an empty sample");
  std::sort(value_weight.begin(), value_weight.end());
  double total = 0.0;
  for (const auto& vw : value_weight) total += vw.second;
  double acc = 0.0;
  for (const auto& [v, w] : value_weight) {
    acc += w;
    if (acc >= 0.5 * total) return v;
  }
  return value_weight.back().first;
}

/// Average ranks (ties share the mean rank) and Spearman's rho from them.
inline std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t t = s;
    while (t + 1 < idx.size() && v[idx[t + 1]] == v[idx[s]]) ++t;
    double r = 0.5 * static_cast<double>(s + t) + 1.0;
    for (std::size_t k = s; k <= t; ++k) rank[idx[k]] = r;
    s = t + 1;
  }
  return rank;
}

inline double spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw DataError("spearman: need two equal-length samples of size >= 2");
  auto ra = average_ranks(a), rb = average_ranks(b);
  double ma = stable_mean(ra), mb = stable_mean(rb), sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

// ---------------------------------------------------------------------------
// Least squares

struct DesignMatrix {
  Eigen::MatrixXd x;
  std::vector<std::string> labels;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(x.cols()); }

  void validate() const {
    if (labels.size() != cols()) throw ConfigError("design matrix: label count does not match column count");
    if (!x.allFinite()) throw DataError("design matrix contains non-finite entries");
  }
};

struct LinearFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  Eigen::MatrixXd cov;  // sigma2 * (X'X)^-1
  double sigma2 = 0.0;  // RSS / (N - K)
  std::vector<std::string> labels;

  double rss() const { return residuals.squaredNorm(); }
  std::size_t n() const { return static_cast<std::size_t>(residuals.size()); }
};

/// Column-pivoted QR of a fixed design, reusable across many right-hand
/// sides. Rank is decided against 1e-10 times the largest pivot.
class LeastSquares {
 public:
  explicit LeastSquares(const DesignMatrix& design, bool require_full_rank = true)
      : labels_(design.labels), qr_(design.x) {
    design.validate();
    qr_.setThreshold(kRankTolerance);
    if (require_full_rank) {
      if (design.rows() < design.cols()) {
        throw NumericalError("least squares: " + std::to_string(design.rows()) + " observations for " +
                             std::to_string(design.cols()) + " columns");
      }
      if (rank() < design.cols()) {
        throw NumericalError("least squares: design is rank deficient; collinear columns: " +
                             join(collinear_columns()));
      }
    }
  }

  std::size_t rank() const { return static_cast<std::size_t>(qr_.rank()); }
  std::size_t rows() const { return static_cast<std::size_t>(qr_.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(qr_.cols()); }
  const std::vector<std::string>& labels() const { return labels_; }

  /// Columns the pivoting judged dependent on the others.
  std::vector<std::string> collinear_columns() const {
    std::vector<std::string> out;
    const auto& perm = qr_.colsPermutation().indices();
    for (Eigen::Index k = qr_.rank(); k < perm.size(); ++k) out.push_back(labels_.at(static_cast<std::size_t>(perm[k])));
    return out;
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& y) const {
    if (static_cast<std::size_t>(y.size()) != rows()) throw DataError("least squares: response length mismatch");
    return qr_.solve(y);
  }

  /// Orthonormal basis of the column space (N x rank).
  Eigen::MatrixXd basis() const {
    Eigen::MatrixXd q = Eigen::MatrixXd::Identity(qr_.rows(), qr_.rank());
    return qr_.householderQ() * q;
  }

  /// y minus its projection on the column space; valid when rank deficient.
  Eigen::VectorXd residualize(const Eigen::VectorXd& y) const {
    Eigen::VectorXd qty = qr_.householderQ().adjoint() * y;
    qty.head(qr_.rank()).setZero();
    return qr_.householderQ() * qty;
  }

  /// (X'X)^-1 for a full-rank design.
  Eigen::MatrixXd xtx_inverse() const {
    const auto k = qr_.cols();
    Eigen::MatrixXd r = qr_.matrixR().topLeftCorner(k, k).template triangularView<Eigen::Upper>();
    Eigen::MatrixXd rinv = r.template triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(k, k));
    Eigen::MatrixXd inv_perm = rinv * rinv.transpose();
    Eigen::MatrixXd out = qr_.colsPermutation() * inv_perm * qr_.colsPermutation().transpose();
    return 0.5 * (out + out.transpose());
  }

  LinearFit fit(const Eigen::VectorXd& y) const {
    LinearFit f;
    f.coef = solve(y);
    f.residuals = residualize(y);
    f.labels = labels_;
    std::size_t dof = rows() > cols() ? rows() - cols() : 0;
    f.sigma2 = dof > 0 ? f.residuals.squaredNorm() / static_cast<double>(dof) : 0.0;
    f.cov = f.sigma2 * xtx_inverse();
    return f;
  }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s;
    for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + v[k];
    return s;
  }

  std::vector<std::string> labels_;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
};

inline LinearFit ols(const DesignMatrix& x, const Eigen::VectorXd& y) { return LeastSquares(x).fit(y); }

// ---------------------------------------------------------------------------
// Kernel ridge regression over (e, r)

enum class KrrTrend { none, linear };

struct KrrParams {
  std::optional<double> bandwidth;  // in standardized units; median heuristic when empty
  double lambda = 1e-3;
  KrrTrend trend = KrrTrend::linear;

  void validate() const {
    if (!(lambda > 0.0)) throw ConfigError("krr: lambda must be positive");
    if (bandwidth && !(*bandwidth > 0.0)) throw ConfigError("krr: bandwidth must be positive");
  }
};

using Point2 = std::array<double, 2>;

/// Fitted radial-kernel smoother. Duplicate training inputs are stored once
/// with their multiplicity; the solution is identical to the expanded one.
struct KernelFit {
  std::vector<Point2> centers;  // standardized
  Eigen::VectorXd alpha;
  Eigen::VectorXd trend;  // coefficients on {1, e_std} (the slope is absent when e is constant)
  Point2 mean{0.0, 0.0};
  Point2 scale{1.0, 1.0};
  double bandwidth = 1.0;
  double lambda = 1e-3;
  bool slope = false;

  Point2 standardize(const Point2& x) const {
    return {(x[0] - mean[0]) / scale[0], (x[1] - mean[1]) / scale[1]};
  }
};

namespace detail {

inline double rbf(const Point2& a, const Point2& b, double h) {
  double d0 = a[0] - b[0], d1 = a[1] - b[1];
  return std::exp(-(d0 * d0 + d1 * d1) / (2.0 * h * h));
}

}  // namespace detail

inline KernelFit krr_fit(std::span<const Point2> inputs, std::span<const double> y, const KrrParams& params = {}) {
  params.validate();
  if (inputs.size() != y.size()) throw DataError("krr: inputs and targets differ in length");
  if (inputs.empty()) throw DataError("krr: no training points");
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (!std::isfinite(inputs[i][0]) || !std::isfinite(inputs[i][1]) || !std::isfinite(y[i]))
      throw DataError("krr: non-finite training point");

  // A canonical order makes the fit a function of the multiset of points.
  std::vector<std::size_t> order(inputs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (inputs[a] != inputs[b]) return inputs[a] < inputs[b];
    return y[a] < y[b];
  });

  KernelFit fit;
  fit.lambda = params.lambda;
  const double n = static_cast<double>(inputs.size());
  for (int c = 0; c < 2; ++c) {
    double s = 0.0;
    for (std::size_t i : order) s += inputs[i][c];
    double mu = s / n, ss = 0.0;
    for (std::size_t i : order) ss += (inputs[i][c] - mu) * (inputs[i][c] - mu);
    double sd = std::sqrt(ss / n);
    fit.mean[c] = mu;
    fit.scale[c] = sd > 0.0 ? sd : 1.0;
  }

  std::vector<double> count, ybar;
  for (std::size_t s = 0; s < order.size();) {
    std::size_t t = s;
    double sum = 0.0;
    while (t < order.size() && inputs[order[t]] == inputs[order[s]]) sum += y[order[t++]];
    fit.centers.push_back(fit.standardize(inputs[order[s]]));
    count.push_back(static_cast<double>(t - s));
    ybar.push_back(sum / static_cast<double>(t - s));
    s = t;
  }
  const auto g = static_cast<Eigen::Index>(fit.centers.size());

  if (params.bandwidth) {
    fit.bandwidth = *params.bandwidth;
  } else {
    // Median over all pairs of original points; coincident pairs count as zeros.
    std::vector<std::pair<double, double>> dist;
    std::vector<std::pair<double, double>> positive;
    for (Eigen::Index a = 0; a < g; ++a) {
      double na = count[static_cast<std::size_t>(a)];
      if (na > 1.0) dist.emplace_back(0.0, na * (na - 1.0) / 2.0);
      for (Eigen::Index b = a + 1; b < g; ++b) {
        const auto& p = fit.centers[static_cast<std::size_t>(a)];
        const auto& q = fit.centers[static_cast<std::size_t>(b)];
        double d = std::hypot(p[0] - q[0], p[1] - q[1]);
        double w = na * count[static_cast<std::size_t>(b)];
        dist.emplace_back(d, w);
        if (d > 0.0) positive.emplace_back(d, w);
      }
    }
    double h = dist.empty() ? 0.0 : weighted_median(dist);
    if (!(h > 0.0)) h = positive.empty() ? 1.0 : weighted_median(positive);
    fit.bandwidth = h;
  }

  Eigen::MatrixXd a(g, g);
  for (Eigen::Index s = 0; s < g; ++s)
    for (Eigen::Index t = s; t < g; ++t)
      a(s, t) = a(t, s) = detail::rbf(fit.centers[static_cast<std::size_t>(s)],
                                       fit.centers[static_cast<std::size_t>(t)], fit.bandwidth);
  for (Eigen::Index s = 0; s < g; ++s) a(s, s) += params.lambda / count[static_cast<std::size_t>(s)];
  Eigen::VectorXd yb = Eigen::Map<const Eigen::VectorXd>(ybar.data(), g);

  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("krr: kernel system is numerically singular; increase lambda");
  }

  if (params.trend == KrrTrend::none) {
    fit.alpha = llt.solve(yb);
    fit.trend = Eigen::VectorXd::Zero(0);
  } else {
    fit.slope = std::any_of(fit.centers.begin(), fit.centers.end(),
                            [&](const Point2& c) { return c[0] != fit.centers.front()[0]; });
    Eigen::Index q = fit.slope ? 2 : 1;
    Eigen::MatrixXd p(g, q);
    for (Eigen::Index s = 0; s < g; ++s) {
      p(s, 0) = 1.0;
      if (fit.slope) p(s, 1) = fit.centers[static_cast<std::size_t>(s)][0];
    }
    Eigen::MatrixXd ainv_p = llt.solve(p);
    Eigen::MatrixXd normal = p.transpose() * ainv_p;
    Eigen::LLT<Eigen::MatrixXd> nllt(normal);
    if (nllt.info() != Eigen::Success) throw NumericalError("krr: trend system is singular");
    fit.trend = nllt.solve(ainv_p.transpose() * yb);
    fit.alpha = llt.solve(yb - p * fit.trend);
  }
  if (!fit.alpha.allFinite() || !fit.trend.allFinite()) {
    throw NumericalError("krr: solution is not finite; increase lambda");
  }
  return fit;
}

inline double krr_predict(const KernelFit& fit, const Point2& x) {
  Point2 z = fit.standardize(x);
  double s = 0.0;
  for (std::size_t g = 0; g < fit.centers.size(); ++g)
    s += fit.alpha[static_cast<Eigen::Index>(g)] * detail::rbf(z, fit.centers[g], fit.bandwidth);
  if (fit.trend.size() > 0) s += fit.trend[0];
  if (fit.slope) s += fit.trend[1] * z[0];
  return s;
}

}  // namespace bipgps
