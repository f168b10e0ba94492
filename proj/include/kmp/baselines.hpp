#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kmp/dataset.hpp"
#include "kmp/kernel.hpp"
#include "kmp/partition.hpp"
#include "kmp/posterior.hpp"
#include "kmp/random.hpp"

namespace kmp {

// ---- local polynomial / Nadaraya-Watson -----------------------------------

struct LocalFitConfig {
  int degree = 1;  // 0 = Nadaraya-Watson
  KernelFamily kernel = KernelFamily::epanechnikov;
  std::optional<double> bandwidth;  // empty: leave-one-out CV
  int cv_grid = 20;
  double cv_lo = 0.0;  // 0: automatic lower end of the CV grid
  double cv_hi = 0.5;

  void validate() const {
    if (degree < 0) throw std::invalid_argument("local fit: degree must be >= 0");
    if (bandwidth && !(*bandwidth > 0.0)) throw std::invalid_argument("local fit: bandwidth must be > 0");
    if (cv_grid < 2 || !(cv_hi > 0.0) || cv_lo < 0.0 || (cv_lo > 0.0 && cv_lo >= cv_hi))
      throw std::invalid_argument("local fit: bad CV grid");
  }
};

/// Curve estimate on a grid. Missing grid points (no kernel mass) are NaN
/// and flagged; sd is the plug-in standard error of the linear smoother.
struct LocalFit {
  Eigen::VectorXd values;
  Eigen::VectorXd sd;
  std::vector<bool> missing;
  std::vector<bool> ridge;
  double bandwidth = 0.0;
  double sigma_hat = 0.0;
  int missing_count = 0;
  int ridge_count = 0;
};

namespace detail {

/// Smoother row l(x) for one evaluation point: fhat(x) = sum_i l_i y_i.
/// Returns false when no observation has positive kernel weight.
struct LocalSmoother {
  const Eigen::MatrixXd& x;
  int degree;
  KernelSpec kernel;
  MultiIndexSet monomials;

  LocalSmoother(const Eigen::MatrixXd& xs, int deg, KernelFamily family, double h)
      : x(xs), degree(deg), kernel{family, h}, monomials(static_cast<int>(xs.cols()), deg) {}

  bool row(std::span<const double> at, Eigen::VectorXd& l, bool& ridge) {
    const Eigen::Index n = x.rows();
    const int p = static_cast<int>(x.cols());
    l.setZero(n);
    ridge = false;
    std::vector<double> d(p);
    double wsum = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) d[j] = x(i, j) - at[j];
      const double w = eval_kernel(kernel, d);
      l(i) = w;
      wsum += w;
    }
    if (!(wsum > 0.0)) return false;
    if (degree == 0) {
      l /= wsum;
      return true;
    }
    const int J = monomials.size();
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(J, J);
    Eigen::MatrixXd design(n, J);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int j = 0; j < p; ++j) d[j] = x(i, j) - at[j];
      for (int s = 0; s < J; ++s) design(i, s) = monomials.monomial(s, d);
    }
    for (Eigen::Index i = 0; i < n; ++i)
      if (l(i) > 0.0) gram.selfadjointView<Eigen::Lower>().rankUpdate(design.row(i).transpose(), l(i));
    gram = gram.selfadjointView<Eigen::Lower>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(gram);
    const auto& sv = svd.singularValues();
    if (!(sv(J - 1) > 1e-12 * sv(0))) {
      gram.diagonal().array() += 1e-10;
      ridge = true;
    }
    const Eigen::VectorXd a = gram.ldlt().solve(Eigen::VectorXd::Unit(J, 0));
    for (Eigen::Index i = 0; i < n; ++i) l(i) = l(i) > 0.0 ? l(i) * design.row(i).dot(a) : 0.0;
    return true;
  }
};

inline std::vector<double> point_of(const Eigen::MatrixXd& m, Eigen::Index i) {
  std::vector<double> v(m.cols());
  for (Eigen::Index j = 0; j < m.cols(); ++j) v[j] = m(i, j);
  return v;
}

/// Leave-one-out CV score of a bandwidth (infinite when some point cannot
/// be predicted without itself).
inline double loo_score(const Dataset& data, int degree, KernelFamily family, double h) {
  LocalSmoother sm(data.x, degree, family, h);
  Eigen::VectorXd l;
  bool ridge = false;
  double acc = 0.0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const auto at = point_of(data.x, i);
    if (!sm.row(at, l, ridge)) return std::numeric_limits<double>::infinity();
    const double lii = l(i);
    if (!(1.0 - lii > 1e-8)) return std::numeric_limits<double>::infinity();
    const double r = (data.y(i) - l.dot(data.y)) / (1.0 - lii);
    acc += r * r;
  }
  return acc / static_cast<double>(data.n());
}

}  // namespace detail

/// Bandwidth minimising leave-one-out error over a log-spaced grid.
inline double cv_bandwidth(const Dataset& data, const LocalFitConfig& cfg) {
  const double n = static_cast<double>(data.n());
  const double lo = cfg.cv_lo > 0.0
                        ? cfg.cv_lo
                        : std::min(0.5 * cfg.cv_hi, std::max(0.01, 2.0 * std::pow(n, -1.0 / data.p())));
  double best_h = cfg.cv_hi, best = std::numeric_limits<double>::infinity();
  for (int g = 0; g < cfg.cv_grid; ++g) {
    const double h = lo * std::pow(cfg.cv_hi / lo, static_cast<double>(g) / (cfg.cv_grid - 1));
    const double s = detail::loo_score(data, cfg.degree, cfg.kernel, h);
    if (s < best) {
      best = s;
      best_h = h;
    }
  }
  return best_h;
}

/// Local polynomial regression of the given degree (degree 0 is the
/// Nadaraya-Watson estimator) on a grid, with plug-in standard errors.
inline LocalFit local_poly_estimate(const Dataset& data, const LocalFitConfig& cfg,
                                    const Eigen::MatrixXd& grid) {
  cfg.validate();
  data.validate();
  if (data.n() < 1) throw std::invalid_argument("local fit: empty dataset");
  if (grid.cols() != data.x.cols()) throw std::invalid_argument("local fit: grid dimension mismatch");
  LocalFit out;
  out.bandwidth = cfg.bandwidth ? *cfg.bandwidth : cv_bandwidth(data, cfg);
  detail::LocalSmoother sm(data.x, cfg.degree, cfg.kernel, out.bandwidth);
  Eigen::VectorXd l;
  bool ridge = false;

  // Noise level from the in-sample residuals: RSS / (n - tr L).
  double rss = 0.0, trace = 0.0;
  Eigen::Index used = 0;
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    if (!sm.row(detail::point_of(data.x, i), l, ridge)) continue;
    const double r = data.y(i) - l.dot(data.y);
    rss += r * r;
    trace += l(i);
    ++used;
  }
  const double dof = static_cast<double>(used) - trace;
  out.sigma_hat = dof > 0.5 ? std::sqrt(rss / dof) : 0.0;

  out.values.resize(grid.rows());
  out.sd.resize(grid.rows());
  out.missing.assign(grid.rows(), false);
  out.ridge.assign(grid.rows(), false);
  for (Eigen::Index g = 0; g < grid.rows(); ++g) {
    if (!sm.row(detail::point_of(grid, g), l, ridge)) {
      out.values(g) = std::numeric_limits<double>::quiet_NaN();
      out.sd(g) = std::numeric_limits<double>::quiet_NaN();
      out.missing[g] = true;
      ++out.missing_count;
      continue;
    }
    out.values(g) = l.dot(data.y);
    out.sd(g) = out.sigma_hat * l.norm();
    if (ridge) {
      out.ridge[g] = true;
      ++out.ridge_count;
    }
  }
  return out;
}

inline LocalFit nw_estimate(const Dataset& data, LocalFitConfig cfg, const Eigen::MatrixXd& grid) {
  cfg.degree = 0;
  return local_poly_estimate(data, cfg, grid);
}

/// Band fhat +/- z * sd from a local fit.
inline CredibleSummary local_fit_band(const LocalFit& fit, const Eigen::MatrixXd& grid, double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("band: level must lie in (0,1)");
  const double z = std::sqrt(2.0) * boost::math::erf_inv(level);
  CredibleSummary s;
  s.grid = grid;
  s.level = level;
  s.mean = fit.values;
  s.lower = fit.values - z * fit.sd;
  s.upper = fit.values + z * fit.sd;
  return s;
}

// ---- rescaled Gaussian process ---------------------------------------------

enum class GpCovariance { squared_exponential, matern32, matern52 };

inline std::string_view to_string(GpCovariance c) {
  switch (c) {
    case GpCovariance::squared_exponential: return "squared_exponential";
    case GpCovariance::matern32: return "matern32";
    case GpCovariance::matern52: return "matern52";
  }
  return "?";
}

inline GpCovariance gp_covariance_from_string(std::string_view s) {
  if (s == "squared_exponential" || s == "se") return GpCovariance::squared_exponential;
  if (s == "matern32") return GpCovariance::matern32;
  if (s == "matern52") return GpCovariance::matern52;
  throw std::invalid_argument("unknown GP covariance: " + std::string(s));
}

/// Unit-variance stationary covariance at distance d and range psi.
inline double gp_covariance(GpCovariance c, double d, double psi) {
  if (!(d >= 0.0) || !(psi > 0.0)) throw std::invalid_argument("gp_covariance: need d >= 0, psi > 0");
  const double r = d / psi;
  switch (c) {
    case GpCovariance::squared_exponential: return std::exp(-r * r);
    case GpCovariance::matern32: {
      const double a = std::numbers::sqrt3 * r;
      return (1.0 + a) * std::exp(-a);
    }
    case GpCovariance::matern52: {
      const double a = std::sqrt(5.0) * r;
      return (1.0 + a + 5.0 * r * r / 3.0) * std::exp(-a);
    }
  }
  return 0.0;
}

struct GpConfig {
  GpCovariance covariance = GpCovariance::squared_exponential;
  double a_psi = 2.0;
  double b_psi = 2.0;
  double sigma = 0.1;
  bool estimate_sigma = false;  // random walk on log sigma, sigma^2 ~ IG(1, 1)
  long burnin = 1000;
  long samples = 1000;
  std::uint64_t seed = 1;
  double init_psi = 0.2;
  double step_log_psi = 0.3;
  double step_log_sigma = 0.1;
  double jitter = 1e-10;
  double max_jitter = 1e-2;

  void validate() const {
    if (!(a_psi >= 2.0) || !(b_psi >= 2.0)) throw std::invalid_argument("gp: a_psi, b_psi must be >= 2");
    if (!(sigma > 0.0)) throw std::invalid_argument("gp: sigma must be positive");
    if (burnin < 0 || samples < 1) throw std::invalid_argument("gp: bad chain length");
    if (!(init_psi > 0.0) || !(step_log_psi > 0.0) || !(step_log_sigma > 0.0))
      throw std::invalid_argument("gp: bad proposal settings");
    if (!(jitter >= 0.0) || !(max_jitter >= jitter)) throw std::invalid_argument("gp: bad jitter");
  }
};

inline Eigen::MatrixXd gp_cross_covariance(GpCovariance c, const Eigen::MatrixXd& a,
                                           const Eigen::MatrixXd& b, double psi) {
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i)
      k(i, j) = gp_covariance(c, (a.row(i) - b.row(j)).norm(), psi);
  return k;
}

/// Factor of K_psi + (sigma^2 + jitter) I with the jitter escalated tenfold
/// until the Cholesky succeeds.
struct GpFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  Eigen::VectorXd alpha;  // (K + s^2 I)^{-1} y
  double log_marginal = 0.0;
  double jitter = 0.0;
};

inline GpFactor gp_factor(GpCovariance c, const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double psi,
                          double sigma, double jitter, double max_jitter) {
  Eigen::MatrixXd k(x.rows(), x.rows());
  for (Eigen::Index j = 0; j < x.rows(); ++j) {
    k(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < x.rows(); ++i)
      k(i, j) = gp_covariance(c, (x.row(i) - x.row(j)).norm(), psi);
  }
  GpFactor f;
  double jit = jitter;
  while (true) {
    Eigen::MatrixXd a = k;
    a.diagonal().array() += sigma * sigma + jit;
    f.llt.compute(a);
    if (f.llt.info() == Eigen::Success) break;
    jit = jit > 0.0 ? jit * 10.0 : 1e-12;
    if (jit > max_jitter) throw std::runtime_error("gp: covariance factorization failed at max jitter");
  }
  f.jitter = jit;
  f.alpha = f.llt.solve(y);
  const double n = static_cast<double>(x.rows());
  const auto& L = f.llt.matrixLLT();
  f.log_marginal = -0.5 * y.dot(f.alpha) - L.diagonal().array().log().sum() -
                   0.5 * n * std::log(2.0 * std::numbers::pi);
  return f;
}

/// log p(y | psi, sigma) under y ~ N(0, K_psi + sigma^2 I).
inline double gp_log_marginal(GpCovariance c, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                              double psi, double sigma, double jitter = 0.0) {
  return gp_factor(c, x, y, psi, sigma, jitter, std::max(jitter, 1e-2)).log_marginal;
}

/// Conditional mean and variance of f on the grid given a factorization.
inline void gp_conditional(GpCovariance c, const Eigen::MatrixXd& x, const Eigen::MatrixXd& grid,
                           double psi, const GpFactor& f, Eigen::VectorXd& mean, Eigen::VectorXd& var) {
  const Eigen::MatrixXd kxg = gp_cross_covariance(c, x, grid, psi);  // n x G
  mean = kxg.transpose() * f.alpha;
  const Eigen::MatrixXd v = f.llt.matrixL().solve(kxg);
  var = (1.0 - v.colwise().squaredNorm().array()).max(0.0).matrix().transpose();
}

struct GpFit {
  CredibleSummary band;
  std::vector<double> psi_draws;
  std::vector<double> sigma_draws;
  double acceptance_rate = 0.0;
  double seconds = 0.0;
  long factorizations = 0;
  double max_jitter_used = 0.0;
};

/// Metropolis random walk on log psi (and optionally log sigma) targeting
/// the marginal likelihood times the inverse-gamma hyperprior; every
/// proposal refactorizes the n x n covariance. Retained draws contribute
/// their conditional mean and one marginal draw of f per grid point.
inline GpFit rescaled_gp_fit(const Dataset& data, const GpConfig& cfg, const Eigen::MatrixXd& grid,
                             double level = 0.95) {
  cfg.validate();
  data.validate();
  if (data.n() < 1) throw std::invalid_argument("gp: empty dataset");
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  GpFit out;
  auto log_prior = [&](double psi, double sigma) {
    // IG(a, b) on psi and IG(1, 1) on sigma^2, both on the log scale.
    double lp = -cfg.a_psi * std::log(psi) - cfg.b_psi / psi;
    if (cfg.estimate_sigma) lp += -2.0 * std::log(sigma) - 1.0 / (sigma * sigma);
    return lp;
  };
  double psi = cfg.init_psi, sigma = cfg.sigma;
  GpFactor cur = gp_factor(cfg.covariance, data.x, data.y, psi, sigma, cfg.jitter, cfg.max_jitter);
  out.factorizations = 1;
  out.max_jitter_used = cur.jitter;
  double cur_lp = cur.log_marginal + log_prior(psi, sigma);

  const Eigen::Index G = grid.rows();
  Eigen::MatrixXd curves(cfg.samples, G);
  Eigen::VectorXd mean_acc = Eigen::VectorXd::Zero(G), cmean, cvar;
  bool cond_valid = false;
  long accepted = 0;
  const long total = cfg.burnin + cfg.samples;
  for (long it = 0; it < total; ++it) {
    const double psi_new = psi * std::exp(cfg.step_log_psi * rng.normal());
    const double sigma_new = cfg.estimate_sigma ? sigma * std::exp(cfg.step_log_sigma * rng.normal()) : sigma;
    GpFactor prop = gp_factor(cfg.covariance, data.x, data.y, psi_new, sigma_new, cfg.jitter, cfg.max_jitter);
    ++out.factorizations;
    out.max_jitter_used = std::max(out.max_jitter_used, prop.jitter);
    const double prop_lp = prop.log_marginal + log_prior(psi_new, sigma_new);
    if (std::log(rng.uniform()) < prop_lp - cur_lp) {
      psi = psi_new;
      sigma = sigma_new;
      cur = std::move(prop);
      cur_lp = prop_lp;
      cond_valid = false;
      ++accepted;
    }
    if (it < cfg.burnin) continue;
    if (!cond_valid) {
      gp_conditional(cfg.covariance, data.x, grid, psi, cur, cmean, cvar);
      cond_valid = true;
    }
    const long t = it - cfg.burnin;
    mean_acc += cmean;
    for (Eigen::Index g = 0; g < G; ++g) curves(t, g) = cmean(g) + std::sqrt(cvar(g)) * rng.normal();
    out.psi_draws.push_back(psi);
    out.sigma_draws.push_back(sigma);
  }
  out.band = pointwise_band(curves, grid, level);
  out.band.mean = mean_acc / static_cast<double>(cfg.samples);
  out.band.lower = out.band.lower.cwiseMin(out.band.mean);
  out.band.upper = out.band.upper.cwiseMax(out.band.mean);
  out.acceptance_rate = static_cast<double>(accepted) / static_cast<double>(total);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace kmp
