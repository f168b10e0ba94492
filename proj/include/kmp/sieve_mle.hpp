#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <vector>

#include "kmp/box_ls.hpp"
#include "kmp/dataset.hpp"
#include "kmp/fixed_design.hpp"
#include "kmp/model.hpp"
#include "kmp/random.hpp"

namespace kmp {

/// Sieve G_K: K (explicit, or from the K_n rule with declared alpha),
/// coefficient box B, degree m and the bandwidth range for K*h.
struct SieveConfig {
  int K = 0;  // 0: use the K_n rule
  double alpha = 1.0;
  double B = 50.0;
  int m = 2;
  double h_lo = 1.2;
  double h_hi = 2.0;
  KernelFamily kernel = KernelFamily::bump;
  int multistart = 5;
  double tol = 1e-9;  // relative objective decrease that ends the outer loop
  int max_iter = 100;
  int line_grid = 21;     // grid points per centre coordinate in [-1, 1]
  int golden_steps = 40;  // refinement steps after each grid scan
  std::optional<double> sigma0;

  void validate() const {
    if (K < 0) throw std::invalid_argument("sieve: K must be >= 0");
    if (!(B >= 0.0)) throw std::invalid_argument("sieve: B must be >= 0");
    if (m < 0) throw std::invalid_argument("sieve: m must be >= 0");
    if (!(h_lo > 1.0) || !(h_hi >= h_lo)) throw std::invalid_argument("sieve: need 1 < h_lo <= h_hi");
    if (multistart < 1) throw std::invalid_argument("sieve: multistart must be >= 1");
    if (!(tol > 0.0)) throw std::invalid_argument("sieve: tolerance must be positive");
    if (max_iter < 1 || line_grid < 2 || golden_steps < 0)
      throw std::invalid_argument("sieve: bad iteration settings");
  }

  int resolve_K(long n, int p) const { return K > 0 ? K : choose_Kn(std::max(2L, n), alpha, p); }
};

struct SieveResult {
  KmpParams params;
  double objective = 0.0;  // residual sum of squares
  int iterations = 0;
  bool hit_iteration_cap = false;
  std::vector<double> trace;  // objective after every outer sweep (best start)
};

/// Box-constrained least squares for the coefficients at fixed centres and
/// bandwidth.
inline BoxLsResult solve_xi_box(const Dataset& data, const KmpParams& q, double B,
                                double tol = 1e-12, int max_sweeps = 50000) {
  const Eigen::MatrixXd psi = basis_matrix(q, data.x);
  return solve_box_ls(psi, data.y, B, tol, max_sweeps);
}

namespace detail {

class SieveObjective {
 public:
  SieveObjective(const Dataset& data, double B) : data_(data), B_(B), yy_(data.y.squaredNorm()) {}

  /// Profile objective: min over the coefficient box at fixed (mu, h).
  double operator()(KmpParams& q) {
    const Eigen::Index J = q.num_coefficients();
    gram_.setZero(J, J);
    c_.setZero(J);
    BasisEvaluator ev(q);
    std::vector<double> x(q.p);
    for (Eigen::Index i = 0; i < data_.n(); ++i) {
      for (int j = 0; j < q.p; ++j) x[j] = data_.x(i, j);
      ev.eval(x, e_);
      const std::size_t cnt = e_.cols.size();
      for (std::size_t a = 0; a < cnt; ++a) {
        c_(e_.cols[a]) += e_.vals[a] * data_.y(i);
        for (std::size_t b = 0; b < cnt; ++b) gram_(e_.cols[a], e_.cols[b]) += e_.vals[a] * e_.vals[b];
      }
    }
    const BoxLsResult r = solve_box_ls(gram_, c_, yy_, B_, 1e-12, 50000);
    q.xi = r.xi;
    return r.objective;
  }

 private:
  const Dataset& data_;
  double B_;
  double yy_;
  Eigen::MatrixXd gram_;
  Eigen::VectorXd c_;
  BasisEntries e_;
};

/// Minimises g over [lo, hi] starting from the incumbent (x0, f0): grid scan
/// then golden-section refinement around the best grid point. Only strict
/// improvements replace the incumbent, so the result never gets worse.
template <typename G>
std::pair<double, double> line_search(G&& g, double lo, double hi, double x0, double f0, int grid,
                                      int golden) {
  double best_x = x0, best_f = f0;
  const double step = (hi - lo) / (grid - 1);
  for (int i = 0; i < grid; ++i) {
    const double x = lo + step * i;
    const double f = g(x);
    if (f < best_f) {
      best_f = f;
      best_x = x;
    }
  }
  double a = std::max(lo, best_x - step), b = std::min(hi, best_x + step);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = g(c), fd = g(d);
  for (int it = 0; it < golden; ++it) {
    if (fc < best_f) best_f = fc, best_x = c;
    if (fd < best_f) best_f = fd, best_x = d;
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = g(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = g(d);
    }
  }
  if (fc < best_f) best_f = fc, best_x = c;
  if (fd < best_f) best_f = fd, best_x = d;
  return {best_x, best_f};
}

}  // namespace detail

/// Block coordinate descent from one starting point: each centre coordinate
/// and then K*h is line-searched on the profile objective (coefficients
/// re-solved exactly for every candidate).
inline SieveResult sieve_descent(const Dataset& data, const SieveConfig& cfg, KmpParams start) {
  detail::SieveObjective obj(data, cfg.B);
  KmpParams q = std::move(start);
  SieveResult res;
  double current = obj(q);
  res.trace.push_back(current);
  const bool vary_h = cfg.h_hi > cfg.h_lo;
  int it = 0;
  for (; it < cfg.max_iter; ++it) {
    const double before = current;
    for (int b = 0; b < q.num_blocks(); ++b) {
      for (int j = 0; j < q.p; ++j) {
        const double t0 = q.mu_tilde(b, j);
        auto g = [&](double t) {
          q.set_mu_tilde(b, j, t);
          return obj(q);
        };
        const auto [t_best, f_best] =
            detail::line_search(g, -1.0, 1.0, t0, current, cfg.line_grid, cfg.golden_steps);
        q.set_mu_tilde(b, j, t_best);
        current = f_best;
      }
    }
    if (vary_h) {
      const double kh0 = q.scaled_bandwidth();
      auto g = [&](double kh) {
        q.h = kh / q.K;
        return obj(q);
      };
      const auto [kh_best, f_best] = detail::line_search(g, cfg.h_lo, cfg.h_hi, kh0, current,
                                                         std::max(5, cfg.line_grid / 2), cfg.golden_steps);
      q.h = kh_best / q.K;
      current = f_best;
    }
    // Re-solve at the accepted point so q.xi matches the reported objective.
    current = std::min(current, obj(q));
    if (current > res.trace.back() * (1.0 + 1e-12) + 1e-300)
      throw std::logic_error("sieve descent: objective increased");
    res.trace.push_back(current);
    if (before - current <= cfg.tol * std::max(before, 1e-300)) {
      ++it;
      break;
    }
  }
  res.iterations = it;
  res.hit_iteration_cap = it >= cfg.max_iter;
  res.objective = obj(q);
  res.params = std::move(q);
  return res;
}

/// Sieve maximum likelihood under Gaussian noise with known sigma0, i.e.
/// least squares over G_K; best of several starts (the first at the block
/// centres and mid bandwidth, the rest random).
inline SieveResult fit_sieve_mle(const Dataset& data, const SieveConfig& cfg, Rng& rng) {
  cfg.validate();
  data.validate();
  if (data.n() < 1) throw std::invalid_argument("sieve: empty dataset");
  const int p = data.p();
  const int K = cfg.resolve_K(data.n(), p);
  std::optional<SieveResult> best;
  for (int s = 0; s < cfg.multistart; ++s) {
    const double kh = s == 0 ? 0.5 * (cfg.h_lo + cfg.h_hi) : rng.uniform(cfg.h_lo, cfg.h_hi);
    KmpParams start = KmpParams::centered(K, p, cfg.m, kh, cfg.kernel);
    if (s > 0)
      for (int b = 0; b < start.num_blocks(); ++b)
        for (int j = 0; j < p; ++j) start.set_mu_tilde(b, j, rng.uniform(-1.0, 1.0));
    SieveResult r = sieve_descent(data, cfg, std::move(start));
    if (!best || r.objective < best->objective) best = std::move(r);
  }
  best->params.sigma =
      cfg.sigma0 ? *cfg.sigma0 : std::max(1e-12, std::sqrt(best->objective / data.n()));
  return *best;
}

}  // namespace kmp
