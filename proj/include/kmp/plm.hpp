#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>

#include "kmp/dataset.hpp"
#include "kmp/priors.hpp"
#include "kmp/random.hpp"
#include "kmp/sampler.hpp"

namespace kmp {

/// Partial linear model y = z'beta + eta(x) + e.
struct PlmParams {
  Eigen::VectorXd beta;
  KmpParams eta;
};

struct PlmOptions {
  /// Theory setting: sigma pinned at 1. Disable to sample sigma as in the
  /// nonparametric model (needed when the noise level is unknown).
  bool fix_sigma_at_one = true;
};

/// Exact conjugate draw of beta given eta: precision tau^-2 I + Z'Z / sigma^2,
/// mean prec^{-1} Z'(y - eta(x)) / sigma^2.
inline Eigen::VectorXd gibbs_beta(const Eigen::MatrixXd& z, const Eigen::MatrixXd& ztz,
                                  const Eigen::VectorXd& y, const Eigen::VectorXd& eta_fit,
                                  double sigma, double beta_sd, Rng& rng) {
  const Eigen::Index q = z.cols();
  const double s2 = sigma * sigma;
  Eigen::MatrixXd prec = ztz / s2;
  prec.diagonal().array() += 1.0 / (beta_sd * beta_sd);
  const Eigen::LLT<Eigen::MatrixXd> llt(prec);
  if (llt.info() != Eigen::Success) throw std::runtime_error("gibbs_beta: precision not SPD");
  const Eigen::VectorXd rhs = z.transpose() * (y - eta_fit) / s2;
  const Eigen::VectorXd mean = llt.solve(rhs);
  Eigen::VectorXd w(q);
  for (Eigen::Index j = 0; j < q; ++j) w(j) = rng.normal();
  // prec = L L'; beta = mean + L'^{-1} w has covariance prec^{-1}.
  return mean + llt.matrixU().solve(w);
}

/// Conditional mean of beta given eta (used by tests and diagnostics).
inline Eigen::VectorXd beta_conditional_mean(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                             const Eigen::VectorXd& eta_fit, double sigma,
                                             double beta_sd) {
  const double s2 = sigma * sigma;
  Eigen::MatrixXd prec = z.transpose() * z / s2;
  prec.diagonal().array() += 1.0 / (beta_sd * beta_sd);
  return prec.llt().solve(z.transpose() * (y - eta_fit) / s2);
}

inline PosteriorDraws run_plm_chain(const McmcConfig& cfg, const PriorConfig& prior, int K,
                                    const Dataset& data, const PlmOptions& opts = {}) {
  cfg.validate();
  prior.validate();
  data.validate();
  if (!data.has_z()) throw std::invalid_argument("run_plm_chain: dataset has no z covariates");
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  McmcConfig eta_cfg = cfg;
  if (opts.fix_sigma_at_one) eta_cfg.fixed_sigma = 1.0;

  const Eigen::MatrixXd ztz = data.z.transpose() * data.z;
  // Start from the least-squares beta so the eta chain sees a sensible target.
  Eigen::VectorXd beta = (ztz + 1e-8 * Eigen::MatrixXd::Identity(data.q(), data.q()))
                             .ldlt()
                             .solve(data.z.transpose() * data.y);
  Eigen::VectorXd target = data.y - data.z * beta;
  ChainState state(prior, data.x, target,
                   initial_params(eta_cfg, prior, K, data.x, target, rng));

  PosteriorDraws out;
  out.K = K;
  out.draws.reserve(cfg.samples);
  const long total = cfg.burnin + static_cast<long>(cfg.samples) * cfg.thin;
  for (long it = 0; it < total; ++it) {
    beta = gibbs_beta(data.z, ztz, data.y, state.fitted(), state.params().sigma, prior.beta_sd, rng);
    state.set_target(data.y - data.z * beta);
    sweep(state, eta_cfg, rng);
    if (it >= cfg.burnin && (it - cfg.burnin + 1) % cfg.thin == 0) {
      check_finite(state, static_cast<int>(it));
      double lp = state.logpost();
      lp += -0.5 * beta.squaredNorm() / (prior.beta_sd * prior.beta_sd);
      out.draws.push_back(Draw{state.params(), state.loglik(), lp, beta});
    }
  }
  out.acceptance = state.acceptance();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

/// Bernstein-von Mises comparison for sqrt(n)(beta - beta0).
struct BvmDiagnostic {
  Eigen::VectorXd delta_n;          // n^{-1/2} sum_i Ezz^{-1} z_i [y_i - eta0(x_i) - z_i'beta0]
  Eigen::VectorXd delta_n_literal;  // same sum with the 1/n prefactor
  Eigen::MatrixXd ezz;
  Eigen::MatrixXd ezz_inv;
  Eigen::VectorXd posterior_mean;   // of sqrt(n)(beta - beta0)
  Eigen::MatrixXd posterior_cov;
  double mean_discrepancy = 0.0;    // max_j |mean_j - delta_j| / sqrt(ezz_inv_jj)
  Eigen::VectorXd cov_ratio;        // diag(posterior_cov) / diag(ezz_inv)
};

/// Centering sum of the limiting normal; ezz defaults to Z'Z / n.
inline Eigen::VectorXd bvm_centering(const Dataset& data, const Eigen::VectorXd& beta0,
                                     const std::function<double(double)>& eta0,
                                     const Eigen::MatrixXd& ezz, double prefactor) {
  const Eigen::LLT<Eigen::MatrixXd> llt(ezz);
  if (llt.info() != Eigen::Success) throw std::domain_error("bvm: E[zz'] is singular");
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(data.q());
  for (Eigen::Index i = 0; i < data.n(); ++i) {
    const double r = data.y(i) - eta0(data.x(i, 0)) - data.z.row(i).dot(beta0);
    acc += data.z.row(i).transpose() * r;
  }
  return prefactor * llt.solve(acc);
}

inline BvmDiagnostic bvm_diagnostic(const PosteriorDraws& draws, const Dataset& data,
                                    const Eigen::VectorXd& beta0,
                                    const std::function<double(double)>& eta0,
                                    std::optional<Eigen::MatrixXd> ezz = std::nullopt) {
  if (draws.empty() || draws.q() != data.q() || beta0.size() != data.q())
    throw std::invalid_argument("bvm_diagnostic: dimension mismatch");
  BvmDiagnostic d;
  const double n = static_cast<double>(data.n());
  d.ezz = ezz ? *ezz : Eigen::MatrixXd(data.z.transpose() * data.z / n);
  const Eigen::LLT<Eigen::MatrixXd> llt(d.ezz);
  if (llt.info() != Eigen::Success) throw std::domain_error("bvm: E[zz'] is singular");
  d.ezz_inv = llt.solve(Eigen::MatrixXd::Identity(data.q(), data.q()));
  d.delta_n = bvm_centering(data, beta0, eta0, d.ezz, 1.0 / std::sqrt(n));
  d.delta_n_literal = bvm_centering(data, beta0, eta0, d.ezz, 1.0 / n);

  const Eigen::Index T = static_cast<Eigen::Index>(draws.size());
  Eigen::MatrixXd s(T, data.q());
  for (Eigen::Index t = 0; t < T; ++t)
    s.row(t) = std::sqrt(n) * (draws.draws[t].beta - beta0).transpose();
  d.posterior_mean = s.colwise().mean().transpose();
  const Eigen::MatrixXd centered = s.rowwise() - d.posterior_mean.transpose();
  d.posterior_cov = centered.transpose() * centered / std::max<double>(1.0, T - 1.0);
  d.cov_ratio = d.posterior_cov.diagonal().cwiseQuotient(d.ezz_inv.diagonal());
  for (Eigen::Index j = 0; j < data.q(); ++j)
    d.mean_discrepancy = std::max(d.mean_discrepancy, std::abs(d.posterior_mean(j) - d.delta_n(j)) /
                                                          std::sqrt(d.ezz_inv(j, j)));
  return d;
}

}  // namespace kmp
