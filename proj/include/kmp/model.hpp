#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "kmp/kernel.hpp"
#include "kmp/partition.hpp"

namespace kmp {

/// One configuration of the kernel mixture of polynomials regression
/// function plus the noise scale.
///
/// Coefficients are stored block-major: xi[block * num_monomials + s].
/// Centres are stored as a (num_blocks x p) matrix; the prior offset
/// mu_tilde = 2K (mu - mu_star) lies in [-1, 1]^p.
struct KmpParams {
  int K = 1;
  int p = 1;
  int m = 0;
  KernelFamily kernel = KernelFamily::bump;
  double h = 1.0;
  Eigen::MatrixXd centers;
  Eigen::VectorXd xi;
  double sigma = 1.0;

  PartitionGrid grid() const { return PartitionGrid(K, p); }
  MultiIndexSet monomials() const { return MultiIndexSet(p, m); }
  int num_blocks() const { return grid().num_blocks(); }
  int num_monomials() const { return static_cast<int>(binomial(p + m, m)); }
  int num_coefficients() const { return num_blocks() * num_monomials(); }
  double scaled_bandwidth() const { return K * h; }

  double mu_tilde(int block, int j) const {
    return 2.0 * K * (centers(block, j) - grid().center(block, j));
  }
  void set_mu_tilde(int block, int j, double t) {
    centers(block, j) = grid().center(block, j) + t / (2.0 * K);
  }

  /// Parameters with every centre at its block centre and zero coefficients.
  static KmpParams centered(int K, int p, int m, double Kh,
                            KernelFamily kernel = KernelFamily::bump, double sigma = 1.0) {
    KmpParams q;
    q.K = K;
    q.p = p;
    q.m = m;
    q.kernel = kernel;
    q.h = Kh / K;
    q.sigma = sigma;
    const PartitionGrid g(K, p);
    q.centers.resize(g.num_blocks(), p);
    for (int b = 0; b < g.num_blocks(); ++b)
      for (int j = 0; j < p; ++j) q.centers(b, j) = g.center(b, j);
    q.xi = Eigen::VectorXd::Zero(g.num_blocks() * binomial(p + m, m));
    return q;
  }

  /// Shape checks plus the constraints every member of the model class
  /// satisfies regardless of hyperparameters: Kh > 1, centres inside their
  /// closed blocks, sigma > 0.
  void validate() const {
    if (K < 1 || p < 1 || m < 0) throw std::invalid_argument("KmpParams: bad K/p/m");
    const PartitionGrid g(K, p);
    if (centers.rows() != g.num_blocks() || centers.cols() != p)
      throw std::invalid_argument("KmpParams: centers shape mismatch");
    if (xi.size() != g.num_blocks() * binomial(p + m, m))
      throw std::invalid_argument("KmpParams: coefficient count mismatch");
    if (!(h > 0.0) || !(K * h > 1.0) || !std::isfinite(h))
      throw std::invalid_argument("KmpParams: K*h must exceed 1");
    if (!(sigma > 0.0) || !std::isfinite(sigma))
      throw std::invalid_argument("KmpParams: sigma must be positive");
    for (int b = 0; b < g.num_blocks(); ++b) {
      const auto k = g.multi_index(b);
      for (int j = 0; j < p; ++j) {
        const double c = centers(b, j);
        if (!(c >= g.lower(k[j]) - 1e-12 && c <= g.upper(k[j]) + 1e-12))
          throw std::invalid_argument("KmpParams: centre outside its block");
      }
    }
    if (!xi.allFinite()) throw std::invalid_argument("KmpParams: non-finite coefficient");
  }
};

namespace detail {

inline void check_domain(std::span<const double> x, int p) {
  if (static_cast<int>(x.size()) != p) throw std::domain_error("point dimension mismatch");
  for (double t : x)
    if (!std::isfinite(t) || t < 0.0 || t > 1.0)
      throw std::domain_error("design point outside (0,1]^p");
}

/// Visits every block whose kernel support may contain x (sup-distance
/// from x to the block's closure below h). fn(block, multi_index).
template <typename Fn>
void for_each_nearby_block(const KmpParams& q, std::span<const double> x, Fn&& fn) {
  const int p = q.p;
  const int K = q.K;
  int lo[8], hi[8], k[8];
  if (p > 8) throw std::invalid_argument("dimension above 8 not supported");
  for (int j = 0; j < p; ++j) {
    lo[j] = std::max(1, static_cast<int>(std::floor(K * (x[j] - q.h))) + 1);
    hi[j] = std::min(K, static_cast<int>(std::ceil(K * (x[j] + q.h))));
    if (hi[j] < lo[j]) return;
    k[j] = lo[j];
  }
  while (true) {
    int idx = 0;
    for (int j = p - 1; j >= 0; --j) idx = idx * K + (k[j] - 1);
    fn(idx);
    int j = 0;
    while (j < p && ++k[j] > hi[j]) {
      k[j] = lo[j];
      ++j;
    }
    if (j == p) break;
  }
}

}  // namespace detail

/// Nonzero kernel mixture weights at x as (block, weight) pairs. Kernel
/// values are rescaled by the largest one before normalising.
struct LocalWeights {
  std::vector<int> blocks;
  std::vector<double> weights;
};

inline void local_weights(const KmpParams& q, std::span<const double> x, LocalWeights& out) {
  detail::check_domain(x, q.p);
  out.blocks.clear();
  out.weights.clear();
  double max_log = -std::numeric_limits<double>::infinity();
  detail::for_each_nearby_block(q, x, [&](int b) {
    double r = 0.0;
    for (int j = 0; j < q.p; ++j) r = std::max(r, std::abs(x[j] - q.centers(b, j)));
    const double lw = log_profile(q.kernel, r / q.h);
    if (lw == -std::numeric_limits<double>::infinity()) return;
    out.blocks.push_back(b);
    out.weights.push_back(lw);
    max_log = std::max(max_log, lw);
  });
  if (out.blocks.empty())
    throw std::domain_error("kernel mixture denominator vanishes (requires K*h > 1)");
  double total = 0.0;
  for (double& w : out.weights) {
    w = std::exp(w - max_log);
    total += w;
  }
  for (double& w : out.weights) w /= total;
}

/// Dense weight vector over all K^p blocks.
inline Eigen::VectorXd mixture_weights(const KmpParams& q, std::span<const double> x) {
  LocalWeights lw;
  local_weights(q, x, lw);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(q.num_blocks());
  for (std::size_t i = 0; i < lw.blocks.size(); ++i) w(lw.blocks[i]) = lw.weights[i];
  return w;
}

/// Sparse evaluation of all basis functions psi_ks at one point.
/// Columns follow the coefficient layout of KmpParams::xi.
struct BasisEntries {
  std::vector<int> cols;
  std::vector<double> vals;
};

class BasisEvaluator {
 public:
  explicit BasisEvaluator(const KmpParams& q)
      : params_(&q), grid_(q.K, q.p), mono_(q.p, q.m), diff_(q.p) {}

  void rebind(const KmpParams& q) { params_ = &q; }

  void eval(std::span<const double> x, BasisEntries& out) {
    const KmpParams& q = *params_;
    local_weights(q, x, lw_);
    out.cols.clear();
    out.vals.clear();
    const int nm = mono_.size();
    for (std::size_t i = 0; i < lw_.blocks.size(); ++i) {
      const int b = lw_.blocks[i];
      for (int j = 0; j < q.p; ++j) diff_[j] = x[j] - grid_.center(b, j);
      for (int s = 0; s < nm; ++s) {
        out.cols.push_back(b * nm + s);
        out.vals.push_back(lw_.weights[i] * mono_.monomial(s, diff_));
      }
    }
  }

  double eval_f(std::span<const double> x) {
    eval(x, scratch_);
    double f = 0.0;
    for (std::size_t i = 0; i < scratch_.cols.size(); ++i)
      f += params_->xi(scratch_.cols[i]) * scratch_.vals[i];
    return f;
  }

  const MultiIndexSet& monomials() const { return mono_; }

 private:
  const KmpParams* params_;
  PartitionGrid grid_;
  MultiIndexSet mono_;
  LocalWeights lw_;
  std::vector<double> diff_;
  BasisEntries scratch_;
};

/// psi_ks(x) = w_k(x) prod_j (x_j - mu*_kj)^{s_j}; s indexes MultiIndexSet.
inline double eval_basis(const KmpParams& q, int block, int s, std::span<const double> x) {
  const Eigen::VectorXd w = mixture_weights(q, x);
  if (w(block) == 0.0) return 0.0;
  const PartitionGrid g(q.K, q.p);
  const MultiIndexSet mono(q.p, q.m);
  std::vector<double> d(q.p);
  for (int j = 0; j < q.p; ++j) d[j] = x[j] - g.center(block, j);
  return w(block) * mono.monomial(s, d);
}

inline double eval_f(const KmpParams& q, std::span<const double> x) {
  BasisEvaluator ev(q);
  return ev.eval_f(x);
}

inline double eval_f(const KmpParams& q, double x) {
  return eval_f(q, std::span<const double>(&x, 1));
}

/// f evaluated at every row of a point matrix (n x p).
inline Eigen::VectorXd eval_f(const KmpParams& q, const Eigen::MatrixXd& points) {
  BasisEvaluator ev(q);
  Eigen::VectorXd out(points.rows());
  std::vector<double> x(q.p);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int j = 0; j < q.p; ++j) x[j] = points(i, j);
    out(i) = ev.eval_f(x);
  }
  return out;
}

/// Dense n x (K^p * binom(p+m, m)) design matrix of basis values.
inline Eigen::MatrixXd basis_matrix(const KmpParams& q, const Eigen::MatrixXd& points) {
  BasisEvaluator ev(q);
  BasisEntries e;
  Eigen::MatrixXd psi = Eigen::MatrixXd::Zero(points.rows(), q.num_coefficients());
  std::vector<double> x(q.p);
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    for (int j = 0; j < q.p; ++j) x[j] = points(i, j);
    ev.eval(x, e);
    for (std::size_t c = 0; c < e.cols.size(); ++c) psi(i, e.cols[c]) = e.vals[c];
  }
  return psi;
}

/// Derivative oracle: returns D^s f0 at a point for an exponent vector s.
using DerivativeOracle =
    std::function<double(std::span<const double> x, std::span<const int> s)>;

/// Coefficients xi_ks = D^s f0(mu*_k) / (s_1! ... s_p!).
inline Eigen::VectorXd taylor_project(const DerivativeOracle& deriv, const PartitionGrid& grid,
                                      int m) {
  const MultiIndexSet mono(grid.dim(), m);
  Eigen::VectorXd xi(grid.num_blocks() * mono.size());
  for (int b = 0; b < grid.num_blocks(); ++b) {
    const auto c = grid.center(b);
    for (int s = 0; s < mono.size(); ++s) {
      double fact = 1.0;
      for (int e : mono[s])
        for (int t = 2; t <= e; ++t) fact *= t;
      xi(b * mono.size() + s) = deriv(c, mono[s]) / fact;
    }
  }
  return xi;
}

/// Central finite-difference derivative oracle built from a plain function,
/// applied order by order along each axis.
inline DerivativeOracle finite_difference_oracle(std::function<double(std::span<const double>)> f,
                                                 double step = 1e-4) {
  return [f = std::move(f), step](std::span<const double> x, std::span<const int> s) {
    std::vector<double> pt(x.begin(), x.end());
    std::vector<int> order(s.begin(), s.end());
    std::function<double(std::vector<double>&, std::size_t)> rec =
        [&](std::vector<double>& y, std::size_t axis) -> double {
      while (axis < order.size() && order[axis] == 0) ++axis;
      if (axis == order.size()) return f(y);
      --order[axis];
      const double saved = y[axis];
      y[axis] = saved + step;
      const double fp = rec(y, axis);
      y[axis] = saved - step;
      const double fm = rec(y, axis);
      y[axis] = saved;
      ++order[axis];
      return (fp - fm) / (2.0 * step);
    };
    return rec(pt, 0);
  };
}

}  // namespace kmp
