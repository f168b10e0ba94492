#pragma once

#include <Eigen/Dense>
#include <boost/math/special_functions/erf.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "kmp/dataset.hpp"
#include "kmp/model.hpp"
#include "kmp/parallel.hpp"
#include "kmp/plm.hpp"
#include "kmp/priors.hpp"
#include "kmp/sampler.hpp"

namespace kmp {

enum class BandKind { pointwise, l2set };

inline const char* to_string(BandKind k) { return k == BandKind::pointwise ? "pointwise" : "l2set"; }

/// Evaluation grid with posterior mean and lower/upper envelopes.
struct CredibleSummary {
  Eigen::MatrixXd grid;
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double level = 0.95;
  BandKind kind = BandKind::pointwise;
  double radius = 0.0;  // l2set only
  int retained = 0;     // l2set: draws inside the radius

  Eigen::VectorXd width() const { return upper - lower; }
};

/// Linear-interpolation quantile of a sorted sample (R type 7).
inline double sorted_quantile(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  if (prob <= 0.0) return sorted.front();
  if (prob >= 1.0) return sorted.back();
  const double h = (sorted.size() - 1) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - lo) * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double prob) {
  std::sort(values.begin(), values.end());
  return sorted_quantile(values, prob);
}

/// Matrix of f_t evaluated on the grid: one row per draw.
inline Eigen::MatrixXd draw_curves(const PosteriorDraws& draws, const Eigen::MatrixXd& grid) {
  Eigen::MatrixXd curves(static_cast<Eigen::Index>(draws.size()), grid.rows());
  for (std::size_t t = 0; t < draws.size(); ++t)
    curves.row(static_cast<Eigen::Index>(t)) = eval_f(draws.draws[t].params, grid).transpose();
  return curves;
}

/// Per grid point: mean and the (1 -/+ level)/2 empirical quantiles of the
/// curves (rows = draws).
inline CredibleSummary pointwise_band(const Eigen::MatrixXd& curves, const Eigen::MatrixXd& grid,
                                      double level) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("band: level must lie in (0,1)");
  if (curves.rows() == 0) throw std::invalid_argument("band: no draws");
  CredibleSummary s;
  s.grid = grid;
  s.level = level;
  s.kind = BandKind::pointwise;
  s.mean = curves.colwise().mean().transpose();
  s.lower.resize(curves.cols());
  s.upper.resize(curves.cols());
  std::vector<double> col(curves.rows());
  for (Eigen::Index g = 0; g < curves.cols(); ++g) {
    for (Eigen::Index t = 0; t < curves.rows(); ++t) col[t] = curves(t, g);
    std::sort(col.begin(), col.end());
    s.lower(g) = std::min(sorted_quantile(col, 0.5 - 0.5 * level), s.mean(g));
    s.upper(g) = std::max(sorted_quantile(col, 0.5 + 0.5 * level), s.mean(g));
  }
  return s;
}

inline CredibleSummary pointwise_band(const PosteriorDraws& draws, const Eigen::MatrixXd& grid,
                                      double level) {
  if (draws.empty()) throw std::invalid_argument("band: no draws");
  return pointwise_band(draw_curves(draws, grid), grid, level);
}

/// L2 credible set: radius = level-quantile of ||f_t - fhat|| (root mean
/// square over the grid, optionally weighted), envelope = min/max over the
/// draws inside the radius.
inline CredibleSummary l2_credible_set(const Eigen::MatrixXd& curves, const Eigen::MatrixXd& grid,
                                       double level, const Eigen::VectorXd& weights = {}) {
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("l2 set: level must lie in (0,1)");
  if (curves.rows() < 2) throw std::invalid_argument("l2 set: need at least 2 draws");
  CredibleSummary s;
  s.grid = grid;
  s.level = level;
  s.kind = BandKind::l2set;
  s.mean = curves.colwise().mean().transpose();
  Eigen::VectorXd w = weights.size() == curves.cols()
                          ? Eigen::VectorXd(weights / weights.sum())
                          : Eigen::VectorXd::Constant(curves.cols(), 1.0 / curves.cols());
  std::vector<double> dist(curves.rows());
  for (Eigen::Index t = 0; t < curves.rows(); ++t) {
    const Eigen::ArrayXd d = curves.row(t).transpose() - s.mean;
    dist[t] = std::sqrt((d.square() * w.array()).sum());
  }
  s.radius = quantile(dist, level);
  s.lower = s.mean;
  s.upper = s.mean;
  for (Eigen::Index t = 0; t < curves.rows(); ++t) {
    if (dist[t] > s.radius) continue;
    ++s.retained;
    s.lower = s.lower.cwiseMin(curves.row(t).transpose());
    s.upper = s.upper.cwiseMax(curves.row(t).transpose());
  }
  return s;
}

inline CredibleSummary l2_credible_set(const PosteriorDraws& draws, const Eigen::MatrixXd& grid,
                                       double level) {
  if (draws.size() < 2) throw std::invalid_argument("l2 set: need at least 2 draws");
  return l2_credible_set(draw_curves(draws, grid), grid, level);
}

// ---- DIC ------------------------------------------------------------------

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;
  double p_dic = 0.0;
  double loglik_at_mean = 0.0;
  bool variance_fallback = false;
};

/// Posterior mean parameters: means of xi, mu_tilde, K*h and sigma (beta
/// averaged separately), so the plug-in point stays in the support.
inline KmpParams posterior_mean_params(const PosteriorDraws& draws) {
  if (draws.empty()) throw std::invalid_argument("posterior mean of empty chain");
  const KmpParams& first = draws.draws.front().params;
  KmpParams mean = first;
  mean.xi.setZero();
  double kh = 0.0, sigma = 0.0;
  Eigen::MatrixXd mt = Eigen::MatrixXd::Zero(first.num_blocks(), first.p);
  for (const Draw& d : draws.draws) {
    mean.xi += d.params.xi;
    kh += d.params.scaled_bandwidth();
    sigma += d.params.sigma;
    for (int b = 0; b < first.num_blocks(); ++b)
      for (int j = 0; j < first.p; ++j) mt(b, j) += d.params.mu_tilde(b, j);
  }
  const double T = static_cast<double>(draws.size());
  mean.xi /= T;
  mean.h = kh / T / first.K;
  mean.sigma = sigma / T;
  for (int b = 0; b < first.num_blocks(); ++b)
    for (int j = 0; j < first.p; ++j) mean.set_mu_tilde(b, j, mt(b, j) / T);
  return mean;
}

inline Eigen::VectorXd posterior_mean_beta(const PosteriorDraws& draws) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(draws.q());
  for (const Draw& d : draws.draws) beta += d.beta;
  return draws.empty() ? beta : Eigen::VectorXd(beta / static_cast<double>(draws.size()));
}

/// Plug-in DIC: -2 l(theta_bar) + 2 p_DIC with p_DIC = 2 [l(theta_bar) -
/// mean_t l(theta_t)]. theta_bar is the posterior mean of the fitted values
/// f_t(x_i) + z_i'beta_t together with the posterior mean of sigma; averaging
/// centres and bandwidths instead lands between modes and drives p_DIC
/// negative. Falls back to p_DIC = 2 var_t(l) when the plug-in
/// log-likelihood is not finite.
inline DicResult dic(const PosteriorDraws& draws, const Dataset& data) {
  if (draws.empty()) throw std::invalid_argument("dic: no draws");
  DicResult r;
  double mean_ll = 0.0;
  for (const Draw& d : draws.draws) mean_ll += d.loglik;
  mean_ll /= static_cast<double>(draws.size());
  r.mean_deviance = -2.0 * mean_ll;

  const double T = static_cast<double>(draws.size());
  Eigen::VectorXd fit = Eigen::VectorXd::Zero(data.n());
  double sigma = 0.0;
  double ll_bar = -std::numeric_limits<double>::infinity();
  try {
    for (const Draw& d : draws.draws) {
      fit += eval_f(d.params, data.x);
      if (d.beta.size() > 0) fit += data.z * d.beta;
      sigma += d.params.sigma;
    }
    ll_bar = gaussian_loglik((data.y - fit / T).squaredNorm(), data.n(), sigma / T);
  } catch (const std::exception&) {
  }
  r.loglik_at_mean = ll_bar;
  if (std::isfinite(ll_bar)) {
    r.p_dic = 2.0 * (ll_bar - mean_ll);
    r.dic = -2.0 * ll_bar + 2.0 * r.p_dic;
  } else {
    double var = 0.0;
    for (const Draw& d : draws.draws) var += (d.loglik - mean_ll) * (d.loglik - mean_ll);
    var /= std::max<double>(1.0, T - 1.0);
    r.variance_fallback = true;
    r.p_dic = 2.0 * var;
    r.dic = r.mean_deviance + r.p_dic;
  }
  return r;
}

struct DicRow {
  int K = 0;
  double dic = 0.0;
  double mean_deviance = 0.0;
  double p_dic = 0.0;
  bool variance_fallback = false;
  bool failed = false;
  std::string error;
};

struct DicReport {
  std::vector<DicRow> rows;
  int selected_K = 0;
  std::string variant = "plug-in: DIC = -2 l(theta_bar) + 2 p_DIC, p_DIC = 2 (l(theta_bar) - mean l); "
                        "theta_bar = posterior mean of the fitted values and of sigma";
};

struct SelectionResult {
  DicReport report;
  PosteriorDraws best;
};

/// One chain per K (seed = base + K), DIC per K, argmin selected.
/// Chains run concurrently; a failing K is recorded and skipped.
inline SelectionResult select_K(const Dataset& data, const PriorConfig& prior, const McmcConfig& cfg,
                                const std::vector<int>& Ks, bool partial_linear = false,
                                const PlmOptions& plm = {}, unsigned threads = default_threads()) {
  if (Ks.empty()) throw std::invalid_argument("select_K: empty K grid");
  std::set<int> seen;
  for (int k : Ks) {
    if (k < 1) throw std::invalid_argument("select_K: K must be >= 1");
    if (!seen.insert(k).second)
      throw std::invalid_argument("select_K: duplicate K " + std::to_string(k));
  }
  std::vector<PosteriorDraws> chains(Ks.size());
  std::vector<DicRow> rows(Ks.size());
  parallel_for(Ks.size(), threads, [&](std::size_t i) {
    rows[i].K = Ks[i];
    try {
      McmcConfig c = cfg;
      c.seed = cfg.seed + static_cast<std::uint64_t>(Ks[i]);
      chains[i] = partial_linear ? run_plm_chain(c, prior, Ks[i], data, plm)
                                 : run_chain(c, prior, Ks[i], data);
      const DicResult d = dic(chains[i], data);
      rows[i].dic = d.dic;
      rows[i].mean_deviance = d.mean_deviance;
      rows[i].p_dic = d.p_dic;
      rows[i].variance_fallback = d.variance_fallback;
    } catch (const std::exception& e) {
      rows[i].failed = true;
      rows[i].error = e.what();
    }
  });
  SelectionResult out;
  int best = -1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].failed) continue;
    if (best < 0 || rows[i].dic < rows[best].dic) best = static_cast<int>(i);
  }
  if (best < 0) throw std::runtime_error("select_K: every chain failed: " + rows.front().error);
  out.report.rows = std::move(rows);
  out.report.selected_K = Ks[best];
  out.best = std::move(chains[best]);
  return out;
}

inline SelectionResult select_K(const Dataset& data, const PriorConfig& prior, const McmcConfig& cfg,
                                int k_min, int k_max, bool partial_linear = false,
                                const PlmOptions& plm = {}, unsigned threads = default_threads()) {
  if (k_min > k_max) throw std::invalid_argument("select_K: k_min > k_max");
  std::vector<int> Ks;
  for (int k = k_min; k <= k_max; ++k) Ks.push_back(k);
  return select_K(data, prior, cfg, Ks, partial_linear, plm, threads);
}

// ---- prediction -------------------------------------------------------------

struct Prediction {
  Eigen::MatrixXd x;
  Eigen::VectorXd mean;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  double level = 0.95;
};

/// Quantile of the equal-weight mixture sum_t N(loc_t, scale_t^2) / T by
/// bisection on the mixture CDF; point masses where scale_t = 0.
inline double mixture_quantile(const std::vector<double>& loc, const std::vector<double>& scale,
                               double prob) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo, smax = 0.0;
  for (std::size_t t = 0; t < loc.size(); ++t) {
    lo = std::min(lo, loc[t]);
    hi = std::max(hi, loc[t]);
    smax = std::max(smax, scale[t]);
  }
  if (smax == 0.0) return quantile(loc, prob);
  lo -= 12.0 * smax;
  hi += 12.0 * smax;
  auto cdf = [&](double y) {
    double acc = 0.0;
    for (std::size_t t = 0; t < loc.size(); ++t) {
      if (scale[t] > 0.0)
        acc += 0.5 * std::erfc(-(y - loc[t]) / (scale[t] * std::numbers::sqrt2));
      else
        acc += y >= loc[t] ? 1.0 : 0.0;
    }
    return acc / static_cast<double>(loc.size());
  };
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < prob ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

/// Posterior predictive y* = f(x*) + N(0, sigma_t^2): mean of f_t(x*) and
/// equal-tailed Gaussian-mixture interval.
inline Prediction predict(const PosteriorDraws& draws, const Eigen::MatrixXd& xnew, double level = 0.95,
                          const Eigen::MatrixXd& znew = {}) {
  if (draws.empty()) throw std::invalid_argument("predict: no draws");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("predict: level must lie in (0,1)");
  const Eigen::MatrixXd curves = draw_curves(draws, xnew);  // throws on out-of-domain x
  Prediction out;
  out.x = xnew;
  out.level = level;
  out.mean.resize(xnew.rows());
  out.lower.resize(xnew.rows());
  out.upper.resize(xnew.rows());
  const std::size_t T = draws.size();
  std::vector<double> loc(T), scale(T);
  for (std::size_t t = 0; t < T; ++t) scale[t] = draws.draws[t].params.sigma;
  for (Eigen::Index i = 0; i < xnew.rows(); ++i) {
    double m = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      loc[t] = curves(static_cast<Eigen::Index>(t), i);
      if (znew.rows() == xnew.rows() && draws.q() > 0) loc[t] += znew.row(i).dot(draws.draws[t].beta);
      m += loc[t];
    }
    out.mean(i) = m / static_cast<double>(T);
    out.lower(i) = mixture_quantile(loc, scale, 0.5 - 0.5 * level);
    out.upper(i) = mixture_quantile(loc, scale, 0.5 + 0.5 * level);
  }
  return out;
}

}  // namespace kmp
