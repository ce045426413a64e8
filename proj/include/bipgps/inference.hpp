#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "bipgps/error.hpp"
#include "bipgps/estimators.hpp"
#include "bipgps/graph.hpp"
#include "bipgps/numerics.hpp"
#include "bipgps/parallel.hpp"
#include "bipgps/rng.hpp"

namespace bipgps {

enum class IntervalType { percentile, basic };

inline const char* to_string(IntervalType t) { return t == IntervalType::percentile ? "percentile" : "basic"; }

struct IntervalEstimate {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  std::string method;
  std::size_t B = 0;
  std::size_t failures = 0;
  std::vector<std::string> flags;

  bool contains(double truth) const { return lower <= truth && truth <= upper; }
  double width() const { return upper - lower; }
};

struct BootstrapOptions {
  std::size_t B = 200;
  double level = 0.95;
  IntervalType type = IntervalType::percentile;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate(std::size_t min_b) const {
    if (B < min_b) throw ConfigError("bootstrap: B must be at least " + std::to_string(min_b));
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap: level must lie in (0,1)");
    if (workers < 1) throw ConfigError("bootstrap: workers must be at least 1");
  }
};

/// Interval from replicate estimates. Percentile: quantiles of the replicates.
/// Basic: the replicate spread around the point, reflected.
inline IntervalEstimate interval_from_replicates(double point, std::vector<double> reps, double level,
                                                 IntervalType type) {
  std::sort(reps.begin(), reps.end());
  double a = (1.0 - level) / 2.0;
  double qlo = quantile_sorted(reps, a), qhi = quantile_sorted(reps, 1.0 - a);
  IntervalEstimate out;
  out.point = point;
  out.level = level;
  if (type == IntervalType::percentile) {
    out.lower = qlo;
    out.upper = qhi;
  } else {
    out.lower = 2.0 * point - qhi;
    out.upper = 2.0 * point - qlo;
  }
  return out;
}

namespace detail {

// Runs replicate b -> estimate, with a failure census; more than 1% failing
// replicates aborts the interval.
template <class Replicate>
std::vector<double> run_replicates(const BootstrapOptions& opt, Replicate&& replicate, std::size_t& failures) {
  std::vector<double> value(opt.B, 0.0);
  std::vector<std::string> error(opt.B);
  std::vector<char> ok(opt.B, 0);
  parallel_for(opt.B, opt.workers, [&](std::size_t b) {
    try {
      value[b] = replicate(b);
      ok[b] = 1;
    } catch (const Error& e) {
      error[b] = e.what();
    }
  });
  std::vector<double> reps;
  std::map<std::string, std::size_t> census;
  for (std::size_t b = 0; b < opt.B; ++b) {
    if (ok[b]) {
      reps.push_back(value[b]);
    } else {
      ++census[error[b]];
    }
  }
  failures = opt.B - reps.size();
  if (failures * 100 > opt.B) {
    std::string msg = "bootstrap: " + std::to_string(failures) + " of " + std::to_string(opt.B) +
                      " replicates failed;";
    for (const auto& [m, c] : census) msg += " [" + std::to_string(c) + "x] " + m + ";";
    throw NumericalError(msg);
  }
  return reps;
}

}  // namespace detail

/// Resamples observation triples with replacement and reruns the estimator.
/// Outcome models are refit on the resample and averaged over `pop`.
inline IntervalEstimate naive_bootstrap(const Dataset& d, const EstimatorSpec& spec, const BootstrapOptions& opt,
                                        const Population& pop) {
  opt.validate(50);
  prepare_population(spec, pop);
  auto point = estimate_ate(spec, d, pop);
  const std::size_t n = d.size();
  std::size_t failures = 0;
  auto reps = detail::run_replicates(
      opt,
      [&](std::size_t b) {
        Rng rng = substream(opt.seed, {b});
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> idx(n);
        for (auto& k : idx) k = pick(rng);
        return estimate_ate(spec, subset(d, idx), pop).value;
      },
      failures);
  auto out = interval_from_replicates(point.value, std::move(reps), opt.level, opt.type);
  out.method = "naive-bootstrap";
  out.B = opt.B;
  out.failures = failures;
  out.flags = point.warnings;
  return out;
}

inline IntervalEstimate naive_bootstrap(const Dataset& d, const EstimatorSpec& spec, const BootstrapOptions& opt) {
  return naive_bootstrap(d, spec, opt, Population::of(d));
}

/// Resamples whole components (blocks of rows sharing a label) until at
/// least N rows are drawn.
inline IntervalEstimate block_bootstrap(const Dataset& d, std::span<const std::size_t> labels,
                                        const EstimatorSpec& spec, const BootstrapOptions& opt,
                                        const Population& pop) {
  opt.validate(1);
  if (labels.size() != d.size()) throw DataError("block bootstrap: one component label per row is required");
  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t k = 0; k < d.size(); ++k) by_label[labels[k]].push_back(k);
  std::vector<std::vector<std::size_t>> comps;
  for (auto& [label, rows] : by_label) comps.push_back(std::move(rows));
  if (comps.size() < 5) {
    throw DataError("block bootstrap: " + std::to_string(comps.size()) + " components, at least 5 are required");
  }
  for (const auto& c : comps) {
    if (2 * c.size() > d.size()) {
      throw DataError("block bootstrap: one component holds " + std::to_string(c.size()) + " of " +
                      std::to_string(d.size()) + " units (more than half)");
    }
  }
  prepare_population(spec, pop);
  auto point = estimate_ate(spec, d, pop);
  std::size_t failures = 0;
  auto reps = detail::run_replicates(
      opt,
      [&](std::size_t b) {
        Rng rng = substream(opt.seed, {b});
        std::uniform_int_distribution<std::size_t> pick(0, comps.size() - 1);
        std::vector<std::size_t> idx;
        idx.reserve(d.size() + d.size() / 2);
        while (idx.size() < d.size()) {
          const auto& c = comps[pick(rng)];
          idx.insert(idx.end(), c.begin(), c.end());
        }
        return estimate_ate(spec, subset(d, idx), pop).value;
      },
      failures);
  auto out = interval_from_replicates(point.value, std::move(reps), opt.level, opt.type);
  out.method = "block-bootstrap";
  out.B = opt.B;
  out.failures = failures;
  out.flags = point.warnings;
  return out;
}

inline IntervalEstimate block_bootstrap(const Dataset& d, std::span<const std::size_t> labels,
                                        const EstimatorSpec& spec, const BootstrapOptions& opt) {
  return block_bootstrap(d, labels, spec, opt, Population::of(d));
}

inline double normal_quantile(double q) { return boost::math::quantile(boost::math::normal(), q); }

/// Normal interval from the homoskedastic coefficient covariance.
inline IntervalEstimate ols_asymptotic_interval(const LinearFit& fit, std::size_t index, double level) {
  if (index >= static_cast<std::size_t>(fit.coef.size())) throw ConfigError("asymptotic interval: bad coefficient index");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("asymptotic interval: level must lie in (0,1)");
  auto k = static_cast<Eigen::Index>(index);
  double se = std::sqrt(std::max(fit.cov(k, k), 0.0));
  double z = normal_quantile(0.5 + level / 2.0);
  IntervalEstimate out;
  out.point = fit.coef[k];
  out.lower = out.point - z * se;
  out.upper = out.point + z * se;
  out.level = level;
  out.method = "ols-asymptotic";
  return out;
}

// ---------------------------------------------------------------------------
// Correlated errors: Y = Phi beta + W gamma + eps

/// Dense weight rows for the given outcome units.
inline Eigen::MatrixXd dense_weights(const BipartiteGraph& g, std::span<const std::size_t> units) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(units.size()),
                                            static_cast<Eigen::Index>(g.m_diversion()));
  for (std::size_t k = 0; k < units.size(); ++k)
    for (const Edge& e : g.row(units[k]))
      w(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(e.diversion)) = e.weight;
  return w;
}

enum class SigmaMethod { finite_sample, moment };

struct ErrorVarianceEstimates {
  double sigma2_eps = 0.0;
  double sigma2_gamma = 0.0;
  double raw_sigma2_eps = 0.0;  // before clipping
  double raw_sigma2_gamma = 0.0;
  bool clipped = false;
  SigmaMethod method = SigmaMethod::finite_sample;
};

/// Two-stage residual estimates of the error variances.
///
/// u = residual of Y on Phi, e = residual of u on W. The default solves the
/// exact expectations of u'u and e'e for (sigma2_eps, sigma2_gamma):
///   E[e'e] = s_eps tr(M_W M_Phi) + s_gam |M_W M_Phi W|_F^2
///   E[u'u] = s_eps (N - K)       + s_gam |M_Phi W|_F^2
/// `moment` uses e'e/N and (u'u - N s_eps)/tr(WW') instead; with Phi inside
/// span(W) that version is biased because e'e only has N - rank(W) degrees
/// of freedom.
inline ErrorVarianceEstimates estimate_sigmas(const Eigen::VectorXd& y, const DesignMatrix& phi,
                                              const Eigen::MatrixXd& w,
                                              SigmaMethod method = SigmaMethod::finite_sample) {
  const auto n = static_cast<double>(phi.rows());
  if (static_cast<std::size_t>(w.rows()) != phi.rows() || static_cast<std::size_t>(y.size()) != phi.rows()) {
    throw DataError("estimate_sigmas: Y, Phi and W must have the same number of rows");
  }
  const double trace_wwt = w.squaredNorm();
  if (!(trace_wwt > 0.0)) throw DataError("estimate_sigmas: tr(WW') is zero (empty graph)");
  LeastSquares lphi(phi);
  std::vector<std::string> wl(static_cast<std::size_t>(w.cols()));
  for (std::size_t j = 0; j < wl.size(); ++j) wl[j] = "W" + std::to_string(j);
  LeastSquares lw(DesignMatrix{w, wl}, false);
  Eigen::VectorXd u = lphi.residualize(y);
  Eigen::VectorXd eps = lw.residualize(u);
  const double uu = u.squaredNorm(), ee = eps.squaredNorm();

  ErrorVarianceEstimates out;
  out.method = method;
  if (method == SigmaMethod::moment) {
    out.raw_sigma2_eps = ee / n;
    out.raw_sigma2_gamma = (uu - n * out.raw_sigma2_eps) / trace_wwt;
    out.sigma2_eps = out.raw_sigma2_eps;
    out.sigma2_gamma = std::max(out.raw_sigma2_gamma, 0.0);
    out.clipped = out.raw_sigma2_gamma < 0.0;
    return out;
  }

  const double k = static_cast<double>(phi.cols());
  const double rank_w = static_cast<double>(lw.rank());
  Eigen::MatrixXd qphi = lphi.basis(), qw = lw.basis();
  Eigen::MatrixXd p_phi_w = qphi * (qphi.transpose() * w);
  const double a11 = n - k - rank_w + (qw.transpose() * qphi).squaredNorm();
  const double a12 = (p_phi_w - qw * (qw.transpose() * p_phi_w)).squaredNorm();
  const double a21 = n - k;
  const double a22 = (w - p_phi_w).squaredNorm();
  const double det = a11 * a22 - a12 * a21;
  if (!(std::abs(det) > 1e-12 * std::abs(a11 * a22)) || !(a11 > 0.5)) {
    throw NumericalError("estimate_sigmas: error variances are not separately identified (rank(W) too large)");
  }
  out.raw_sigma2_eps = (ee * a22 - a12 * uu) / det;
  out.raw_sigma2_gamma = (a11 * uu - a21 * ee) / det;
  out.sigma2_eps = out.raw_sigma2_eps;
  out.sigma2_gamma = out.raw_sigma2_gamma;
  if (out.sigma2_gamma < 0.0) {
    out.clipped = true;
    out.sigma2_gamma = 0.0;
    out.sigma2_eps = uu / a21;
  } else if (out.sigma2_eps < 0.0) {
    out.clipped = true;
    out.sigma2_eps = 0.0;
    out.sigma2_gamma = uu / a22;
  }
  return out;
}

/// sigma_eps Q^-1 + sigma_gamma Q^-1 Q_PhiW Q^-1 with Q = Phi'Phi/N and
/// Q_PhiW = Phi'WW'Phi/N: the limit covariance of sqrt(N)(beta_hat - beta).
inline Eigen::MatrixXd correlated_error_variance(const DesignMatrix& phi, const Eigen::MatrixXd& w,
                                                 double sigma2_eps, double sigma2_gamma) {
  phi.validate();
  if (static_cast<std::size_t>(w.rows()) != phi.rows()) throw DataError("variance: Phi and W row counts differ");
  const double n = static_cast<double>(phi.rows());
  Eigen::MatrixXd q = phi.x.transpose() * phi.x / n;
  Eigen::MatrixXd wtphi = w.transpose() * phi.x;
  Eigen::MatrixXd q_phiw = wtphi.transpose() * wtphi / n;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(q);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
  const auto& sv = svd.singularValues();
  if (ldlt.info() != Eigen::Success || sv.size() == 0 || !(sv(sv.size() - 1) > kRankTolerance * sv(0))) {
    throw NumericalError("variance: Phi'Phi/N is singular");
  }
  Eigen::MatrixXd qinv = ldlt.solve(Eigen::MatrixXd::Identity(q.rows(), q.cols()));
  Eigen::MatrixXd out = sigma2_eps * qinv + sigma2_gamma * qinv * q_phiw * qinv;
  return 0.5 * (out + out.transpose());
}

struct ParametricBootstrap {
  LinearFit fit;
  ErrorVarianceEstimates sigmas;
  std::vector<IntervalEstimate> intervals;  // one per coefficient
  Eigen::MatrixXd replicates;               // B x K, beta_b
};

/// Simulates Y_b = Phi beta_hat + W gamma_b + eps_b from the fitted error
/// variances and uses beta_b - beta_hat as the law of beta_hat - beta.
inline ParametricBootstrap parametric_bootstrap(const Eigen::VectorXd& y, const DesignMatrix& phi,
                                                const Eigen::MatrixXd& w, const BootstrapOptions& opt,
                                                SigmaMethod method = SigmaMethod::finite_sample) {
  opt.validate(1);
  ParametricBootstrap out;
  out.sigmas = estimate_sigmas(y, phi, w, method);
  LeastSquares ls(phi);
  out.fit = ls.fit(y);
  const Eigen::VectorXd mean = phi.x * out.fit.coef;
  const auto k = phi.x.cols();
  out.replicates.resize(static_cast<Eigen::Index>(opt.B), k);
  const double sg = std::sqrt(out.sigmas.sigma2_gamma), se = std::sqrt(out.sigmas.sigma2_eps);
  parallel_for(opt.B, opt.workers, [&](std::size_t b) {
    Rng rng = substream(opt.seed, {b});
    std::normal_distribution<double> z(0.0, 1.0);
    Eigen::VectorXd gamma(w.cols()), eps(w.rows());
    for (Eigen::Index j = 0; j < gamma.size(); ++j) gamma[j] = sg * z(rng);
    for (Eigen::Index i = 0; i < eps.size(); ++i) eps[i] = se * z(rng);
    Eigen::VectorXd yb = mean + w * gamma + eps;
    out.replicates.row(static_cast<Eigen::Index>(b)) = ls.solve(yb).transpose();
  });
  for (Eigen::Index c = 0; c < k; ++c) {
    std::vector<double> delta(opt.B);
    for (std::size_t b = 0; b < opt.B; ++b) delta[b] = out.replicates(static_cast<Eigen::Index>(b), c) - out.fit.coef[c];
    std::sort(delta.begin(), delta.end());
    double a = (1.0 - opt.level) / 2.0;
    double qlo = quantile_sorted(delta, a), qhi = quantile_sorted(delta, 1.0 - a);
    IntervalEstimate iv;
    iv.point = out.fit.coef[c];
    if (opt.type == IntervalType::percentile) {
      iv.lower = iv.point + qlo;
      iv.upper = iv.point + qhi;
    } else {
      iv.lower = iv.point - qhi;
      iv.upper = iv.point - qlo;
    }
    iv.level = opt.level;
    iv.method = "parametric-bootstrap";
    iv.B = opt.B;
    if (out.sigmas.clipped) iv.flags.push_back("error variance estimate clipped at 0");
    out.intervals.push_back(iv);
  }
  return out;
}

}  // namespace bipgps
