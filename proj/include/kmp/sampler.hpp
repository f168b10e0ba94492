#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "kmp/box_ls.hpp"
#include "kmp/dataset.hpp"
#include "kmp/model.hpp"
#include "kmp/priors.hpp"
#include "kmp/random.hpp"

namespace kmp {

/// Chain length, seed and the optional pinning of blocks of parameters.
struct McmcConfig {
  int burnin = 1000;
  int samples = 1000;
  int thin = 1;
  std::uint64_t seed = 1;
  bool init_least_squares = false;
  std::optional<double> fixed_kh;  // K*h held constant
  bool fix_centers = false;        // centres held at block centres
  std::optional<double> fixed_sigma;

  void validate() const {
    if (burnin < 0) throw ConfigError("mcmc: burnin must be >= 0");
    if (samples < 1) throw ConfigError("mcmc: samples must be >= 1");
    if (thin < 1) throw ConfigError("mcmc: thin must be >= 1");
    if (fixed_kh && !(*fixed_kh > 1.0)) throw ConfigError("mcmc: fixed K*h must exceed 1");
    if (fixed_sigma && !(*fixed_sigma > 0.0)) throw ConfigError("mcmc: fixed sigma must be > 0");
  }
};

struct AcceptanceRecord {
  long mu_proposed = 0;
  long mu_accepted = 0;
  long h_proposed = 0;
  long h_accepted = 0;
  long xi_prior_fallbacks = 0;

  double mu_rate() const { return mu_proposed ? double(mu_accepted) / mu_proposed : 0.0; }
  double h_rate() const { return h_proposed ? double(h_accepted) / h_proposed : 0.0; }
};

struct Draw {
  KmpParams params;
  double loglik = 0.0;
  double logpost = 0.0;
  Eigen::VectorXd beta;  // empty unless partial linear model
};

/// Retained post-burn-in draws at one fixed K.
struct PosteriorDraws {
  int K = 0;
  std::vector<Draw> draws;
  AcceptanceRecord acceptance;
  double seconds = 0.0;

  std::size_t size() const { return draws.size(); }
  bool empty() const { return draws.empty(); }
  int q() const { return draws.empty() ? 0 : static_cast<int>(draws.front().beta.size()); }
};

/// Gaussian log-likelihood sum_i log phi_sigma(y_i - f(x_i)).
inline double gaussian_loglik(double sse, Eigen::Index n, double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("loglik: sigma must be positive");
  return -0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi * sigma * sigma) -
         0.5 * sse / (sigma * sigma);
}

inline double loglik(const KmpParams& q, const Dataset& data) {
  if (!(q.sigma > 0.0)) throw std::domain_error("loglik: sigma must be positive");
  const Eigen::VectorXd f = eval_f(q, data.x);
  return gaussian_loglik((data.y - f).squaredNorm(), data.n(), q.sigma);
}

/// Mutable state of one chain: the current parameters, their sparse basis
/// evaluation at the design points, and the residuals target - f(x).
///
/// Basis rows are stored with a fixed per-row capacity; they are recomputed
/// only when a centre or the bandwidth moves.
class ChainState {
 public:
  ChainState(const PriorConfig& prior, const Eigen::MatrixXd& x, Eigen::VectorXd target,
             KmpParams init)
      : prior_(prior), x_(x), target_(std::move(target)), params_(std::move(init)) {
    params_.validate();
    if (x_.rows() != target_.size()) throw std::invalid_argument("chain: x/y size mismatch");
    if (x_.rows() > 0 && x_.cols() != params_.p)
      throw std::invalid_argument("chain: design dimension mismatch");
    rebuild_rows();
  }

  const KmpParams& params() const { return params_; }
  KmpParams& mutable_params() { return params_; }
  const PriorConfig& prior() const { return prior_; }
  Eigen::Index n() const { return target_.size(); }
  const Eigen::VectorXd& residuals() const { return resid_; }
  const Eigen::VectorXd& target() const { return target_; }
  const Eigen::MatrixXd& design() const { return x_; }
  AcceptanceRecord& acceptance() { return acc_; }
  const AcceptanceRecord& acceptance() const { return acc_; }

  /// f(x_i) for every design point.
  Eigen::VectorXd fitted() const { return target_ - resid_; }

  void set_target(Eigen::VectorXd target) {
    if (target.size() != target_.size()) throw std::invalid_argument("chain: target size");
    const Eigen::VectorXd f = fitted();
    target_ = std::move(target);
    resid_ = target_ - f;
  }

  /// Replace the coefficients and refresh residuals.
  void set_xi(const Eigen::VectorXd& xi) {
    params_.xi = xi;
    recompute_residuals();
  }

  double sse() const { return resid_.squaredNorm(); }
  double loglik() const { return n() == 0 ? 0.0 : gaussian_loglik(sse(), n(), params_.sigma); }
  double logpost() const { return loglik() + log_prior_density(prior_, params_); }

  /// Gram matrix and cross products of the current basis (dense).
  void normal_equations(Eigen::MatrixXd& gram, Eigen::VectorXd& c) const {
    const int J = params_.num_coefficients();
    gram = Eigen::MatrixXd::Zero(J, J);
    c = Eigen::VectorXd::Zero(J);
    for (Eigen::Index i = 0; i < n(); ++i) {
      const int cnt = count_[i];
      const int* cols = &cols_[i * cap_];
      const double* vals = &vals_[i * cap_];
      for (int a = 0; a < cnt; ++a) {
        c(cols[a]) += vals[a] * target_(i);
        for (int b = 0; b < cnt; ++b) gram(cols[a], cols[b]) += vals[a] * vals[b];
      }
    }
  }

  // ---- updates --------------------------------------------------------

  /// Draws coefficient j from its exact full conditional. Returns false
  /// when the conditional is improper and the prior was used instead.
  bool draw_xi_coordinate(int j, Rng& rng) {
    ensure_columns();
    double a = 0.0, c = 0.0;
    const double xj = params_.xi(j);
    for (int t = col_ptr_[j]; t < col_ptr_[j + 1]; ++t) {
      const double v = col_val_[t];
      const Eigen::Index i = col_row_[t];
      a += v * v;
      c += v * (resid_(i) + v * xj);
    }
    const double s2 = params_.sigma * params_.sigma;
    double next;
    bool proper = true;
    if (prior_.xi_family == XiPriorFamily::uniform) {
      if (a <= 0.0) {
        next = rng.uniform(-prior_.B, prior_.B);
        proper = false;
      } else {
        next = truncated_normal(rng, c / a, std::sqrt(s2 / a), -prior_.B, prior_.B);
      }
    } else {
      const double sd0 = prior_.xi_prior_sd(params_.sigma);
      const double prec = a / s2 + 1.0 / (sd0 * sd0);
      next = truncated_normal(rng, (c / s2) / prec, 1.0 / std::sqrt(prec), -prior_.B, prior_.B);
    }
    const double delta = next - xj;
    if (delta != 0.0) {
      for (int t = col_ptr_[j]; t < col_ptr_[j + 1]; ++t) resid_(col_row_[t]) -= col_val_[t] * delta;
      params_.xi(j) = next;
    }
    if (!proper) ++acc_.xi_prior_fallbacks;
    return proper;
  }

  void gibbs_xi(Rng& rng) {
    for (int j = 0; j < params_.num_coefficients(); ++j) draw_xi_coordinate(j, rng);
  }

  /// Per-block reflected Gaussian random walk on mu_tilde in [-1,1]^p.
  void mh_mu(Rng& rng, double step) {
    if (step <= 0.0) return;
    const int p = params_.p;
    std::vector<double> old_c(p), new_t(p);
    for (int b = 0; b < params_.num_blocks(); ++b) {
      double log_ratio = 0.0;
      for (int j = 0; j < p; ++j) {
        old_c[j] = params_.centers(b, j);
        const double t = params_.mu_tilde(b, j);
        new_t[j] = reflect_into(t + step * rng.normal(), -1.0, 1.0);
        log_ratio += log_prior_mu_tilde(prior_, new_t[j]) - log_prior_mu_tilde(prior_, t);
      }
      for (int j = 0; j < p; ++j) params_.set_mu_tilde(b, j, new_t[j]);
      ++acc_.mu_proposed;

      affected_.clear();
      const double h = params_.h;
      for (Eigen::Index i = 0; i < n(); ++i) {
        double d_old = 0.0, d_new = 0.0;
        for (int j = 0; j < p; ++j) {
          d_old = std::max(d_old, std::abs(x_(i, j) - old_c[j]));
          d_new = std::max(d_new, std::abs(x_(i, j) - params_.centers(b, j)));
        }
        if (d_old < h || d_new < h) affected_.push_back(i);
      }
      const double s2 = params_.sigma * params_.sigma;
      double delta_sse = 0.0;
      prop_cols_.resize(affected_.size() * cap_);
      prop_vals_.resize(affected_.size() * cap_);
      prop_count_.resize(affected_.size());
      prop_resid_.resize(affected_.size());
      BasisEvaluator ev(params_);
      for (std::size_t a = 0; a < affected_.size(); ++a) {
        const Eigen::Index i = affected_[a];
        eval_row(ev, i, &prop_cols_[a * cap_], &prop_vals_[a * cap_], prop_count_[a]);
        double f = 0.0;
        for (int t = 0; t < prop_count_[a]; ++t)
          f += params_.xi(prop_cols_[a * cap_ + t]) * prop_vals_[a * cap_ + t];
        prop_resid_[a] = target_(i) - f;
        delta_sse += prop_resid_[a] * prop_resid_[a] - resid_(i) * resid_(i);
      }
      log_ratio -= 0.5 * delta_sse / s2;
      if (std::log(rng.uniform()) < log_ratio) {
        ++acc_.mu_accepted;
        for (std::size_t a = 0; a < affected_.size(); ++a) {
          const Eigen::Index i = affected_[a];
          std::copy_n(&prop_cols_[a * cap_], prop_count_[a], &cols_[i * cap_]);
          std::copy_n(&prop_vals_[a * cap_], prop_count_[a], &vals_[i * cap_]);
          count_[i] = prop_count_[a];
          resid_(i) = prop_resid_[a];
        }
        columns_valid_ = false;
      } else {
        for (int j = 0; j < p; ++j) params_.centers(b, j) = old_c[j];
      }
    }
  }

  /// Reflected Gaussian random walk on K*h in [h_lo, h_hi].
  void mh_h(Rng& rng, double step) {
    if (step <= 0.0) return;
    const double kh = params_.scaled_bandwidth();
    const double next = reflect_into(kh + step * rng.normal(), prior_.h_lo, prior_.h_hi);
    ++acc_.h_proposed;
    const double old_h = params_.h;
    const double old_sse = sse();
    params_.h = next / params_.K;

    // Swap in a fresh row set; restore on rejection.
    std::swap(cols_, spare_cols_);
    std::swap(vals_, spare_vals_);
    std::swap(count_, spare_count_);
    const int old_cap = cap_;
    const Eigen::VectorXd old_resid = resid_;
    rebuild_rows();
    const double log_ratio = -0.5 * (sse() - old_sse) / (params_.sigma * params_.sigma);
    if (std::log(rng.uniform()) < log_ratio) {
      ++acc_.h_accepted;
    } else {
      params_.h = old_h;
      std::swap(cols_, spare_cols_);
      std::swap(vals_, spare_vals_);
      std::swap(count_, spare_count_);
      cap_ = old_cap;
      resid_ = old_resid;
      columns_valid_ = false;
    }
  }

  /// Exact inverse-gamma conditional of sigma^2 truncated to the prior range.
  void gibbs_sigma(Rng& rng) {
    double shape = prior_.sigma_shape + 0.5 * static_cast<double>(n());
    double scale = prior_.sigma_scale + 0.5 * sse();
    if (prior_.xi_scale_with_sigma) {
      shape += 0.5 * static_cast<double>(params_.num_coefficients());
      scale += 0.5 * params_.xi.squaredNorm() / (prior_.xi_sd * prior_.xi_sd);
    }
    const double v = truncated_inverse_gamma(rng, shape, scale, prior_.sigma_lo * prior_.sigma_lo,
                                             prior_.sigma_hi * prior_.sigma_hi);
    params_.sigma = std::sqrt(v);
  }

  void recompute_residuals() {
    for (Eigen::Index i = 0; i < n(); ++i) {
      double f = 0.0;
      for (int t = 0; t < count_[i]; ++t) f += params_.xi(cols_[i * cap_ + t]) * vals_[i * cap_ + t];
      resid_(i) = target_(i) - f;
    }
  }

  /// Re-evaluates every basis row for the current centres and bandwidth.
  void rebuild_rows() {
    const int per_axis = static_cast<int>(std::ceil(2.0 * params_.K * params_.h)) + 2;
    int blocks = 1;
    for (int j = 0; j < params_.p; ++j) blocks *= std::min(per_axis, params_.K);
    cap_ = blocks * params_.num_monomials();
    cols_.assign(static_cast<std::size_t>(n()) * cap_, 0);
    vals_.assign(static_cast<std::size_t>(n()) * cap_, 0.0);
    count_.assign(static_cast<std::size_t>(n()), 0);
    resid_.resize(n());
    BasisEvaluator ev(params_);
    for (Eigen::Index i = 0; i < n(); ++i) eval_row(ev, i, &cols_[i * cap_], &vals_[i * cap_], count_[i]);
    recompute_residuals();
    columns_valid_ = false;
  }

 private:
  void eval_row(BasisEvaluator& ev, Eigen::Index i, int* cols, double* vals, int& count) {
    for (int j = 0; j < params_.p; ++j) point_[j] = x_(i, j);
    ev.eval(std::span<const double>(point_, params_.p), entries_);
    if (static_cast<int>(entries_.cols.size()) > cap_)
      throw std::logic_error("basis row exceeds capacity");
    count = static_cast<int>(entries_.cols.size());
    std::copy(entries_.cols.begin(), entries_.cols.end(), cols);
    std::copy(entries_.vals.begin(), entries_.vals.end(), vals);
  }

  void ensure_columns() {
    if (columns_valid_) return;
    const int J = params_.num_coefficients();
    col_ptr_.assign(J + 1, 0);
    for (Eigen::Index i = 0; i < n(); ++i)
      for (int t = 0; t < count_[i]; ++t) ++col_ptr_[cols_[i * cap_ + t] + 1];
    for (int j = 0; j < J; ++j) col_ptr_[j + 1] += col_ptr_[j];
    col_row_.resize(col_ptr_[J]);
    col_val_.resize(col_ptr_[J]);
    std::vector<int> fill(col_ptr_.begin(), col_ptr_.end() - 1);
    for (Eigen::Index i = 0; i < n(); ++i)
      for (int t = 0; t < count_[i]; ++t) {
        const int c = cols_[i * cap_ + t];
        col_row_[fill[c]] = i;
        col_val_[fill[c]] = vals_[i * cap_ + t];
        ++fill[c];
      }
    columns_valid_ = true;
  }

  const PriorConfig& prior_;
  const Eigen::MatrixXd& x_;
  Eigen::VectorXd target_;
  KmpParams params_;
  Eigen::VectorXd resid_;
  AcceptanceRecord acc_;

  int cap_ = 0;
  std::vector<int> cols_, spare_cols_;
  std::vector<double> vals_, spare_vals_;
  std::vector<int> count_, spare_count_;

  bool columns_valid_ = false;
  std::vector<int> col_ptr_;
  std::vector<Eigen::Index> col_row_;
  std::vector<double> col_val_;

  std::vector<Eigen::Index> affected_;
  std::vector<int> prop_cols_;
  std::vector<double> prop_vals_;
  std::vector<int> prop_count_;
  std::vector<double> prop_resid_;

  double point_[8] = {};
  BasisEntries entries_;
};

inline void gibbs_xi(ChainState& s, Rng& rng) { s.gibbs_xi(rng); }
inline void mh_mu(ChainState& s, Rng& rng) { s.mh_mu(rng, s.prior().step_mu); }
inline void mh_h(ChainState& s, Rng& rng) { s.mh_h(rng, s.prior().kh_step()); }
inline void gibbs_sigma(ChainState& s, Rng& rng) { s.gibbs_sigma(rng); }

/// Initial parameters for a chain: a prior draw with the pinned blocks
/// overwritten, optionally with box-constrained least-squares coefficients.
inline KmpParams initial_params(const McmcConfig& cfg, const PriorConfig& prior, int K,
                                const Eigen::MatrixXd& x, const Eigen::VectorXd& target,
                                Rng& rng) {
  const int p = x.cols() > 0 ? static_cast<int>(x.cols()) : 1;
  KmpParams init = sample_prior(prior, K, rng, p);
  if (cfg.fixed_kh) init.h = *cfg.fixed_kh / K;
  if (cfg.fix_centers)
    for (int b = 0; b < init.num_blocks(); ++b)
      for (int j = 0; j < p; ++j) init.set_mu_tilde(b, j, 0.0);
  if (cfg.fixed_sigma) init.sigma = *cfg.fixed_sigma;
  if (cfg.init_least_squares && x.rows() > 0) {
    const Eigen::MatrixXd psi = basis_matrix(init, x);
    init.xi = solve_box_ls(psi, target, prior.B, 1e-8, 500).xi;
  }
  return init;
}

/// One systematic-scan sweep: xi, centres, bandwidth, sigma.
inline void sweep(ChainState& state, const McmcConfig& cfg, Rng& rng) {
  state.gibbs_xi(rng);
  if (!cfg.fix_centers) state.mh_mu(rng, state.prior().step_mu);
  if (!cfg.fixed_kh) state.mh_h(rng, state.prior().kh_step());
  if (!cfg.fixed_sigma) state.gibbs_sigma(rng);
}

inline void check_finite(const ChainState& state, int iteration) {
  const double lp = state.logpost();
  if (!std::isfinite(lp)) {
    std::ostringstream os;
    os << "non-finite log-posterior at iteration " << iteration << " (loglik=" << state.loglik()
       << ", sigma=" << state.params().sigma << ", Kh=" << state.params().scaled_bandwidth() << ")";
    throw std::runtime_error(os.str());
  }
}

/// Metropolis-within-Gibbs chain for y = f(x) + e at fixed K.
inline PosteriorDraws run_chain(const McmcConfig& cfg, const PriorConfig& prior, int K,
                                const Dataset& data) {
  cfg.validate();
  prior.validate();
  data.validate();
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(cfg.seed);
  ChainState state(prior, data.x, data.y, initial_params(cfg, prior, K, data.x, data.y, rng));
  PosteriorDraws out;
  out.K = K;
  out.draws.reserve(cfg.samples);
  const long total = cfg.burnin + static_cast<long>(cfg.samples) * cfg.thin;
  for (long it = 0; it < total; ++it) {
    sweep(state, cfg, rng);
    if (it >= cfg.burnin && (it - cfg.burnin + 1) % cfg.thin == 0) {
      check_finite(state, static_cast<int>(it));
      out.draws.push_back(Draw{state.params(), state.loglik(), state.logpost(), {}});
    }
  }
  out.acceptance = state.acceptance();
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

}  // namespace kmp
