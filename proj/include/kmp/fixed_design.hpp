#pragma once

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "kmp/dataset.hpp"
#include "kmp/model.hpp"
#include "kmp/random.hpp"

namespace kmp {

/// K_n = ceil((n / log n)^{1 / (2 alpha + p)}).
inline int choose_Kn(long n, double alpha, int p) {
  if (n < 2) throw std::invalid_argument("choose_Kn: n must be >= 2");
  if (!(alpha > 0.0)) throw std::invalid_argument("choose_Kn: alpha must be positive");
  if (p < 1) throw std::invalid_argument("choose_Kn: p must be >= 1");
  const double nn = static_cast<double>(n);
  const double base = nn / std::log(nn);
  return std::max(1, static_cast<int>(std::ceil(std::pow(base, 1.0 / (2.0 * alpha + p)))));
}

/// Simplified model with K, h = 2/K and the centres pinned at the block
/// centres. Prior: xi | sigma ~ N(0, n^2 sigma^2) independently and
/// pi(sigma^2) ∝ (sigma^2)^{-a/2 - 1} exp(-b / (2 sigma^2)).
struct FixedDesignModel {
  int K = 1;
  int p = 1;
  int m = 1;
  double a_sigma = 2.0;
  double b_sigma = 2.0;
  KernelFamily kernel = KernelFamily::bump;

  KmpParams params() const { return KmpParams::centered(K, p, m, 2.0, kernel); }

  void validate() const {
    if (K < 1 || p < 1 || m < 0) throw std::invalid_argument("fixed design: bad K/p/m");
    if (!(a_sigma >= 2.0) || !(b_sigma >= 2.0))
      throw std::invalid_argument("fixed design: a_sigma, b_sigma must be >= 2");
  }
};

/// Closed-form normal / inverse-gamma posterior.
///
/// With A = Psi'Psi + n^{-2} I and m = A^{-1} Psi'y:
///   xi | sigma^2, y ~ N(m, sigma^2 A^{-1})
///   sigma^2 | y     ~ IG(a/2 + n/2, b/2 + (y'y - m'Am)/2)
/// obtained by integrating xi out of the joint; marginally xi | y is a
/// multivariate t with 2 * shape degrees of freedom.
struct ConjugatePosterior {
  KmpParams basis;  // K, h, centres; xi holds the posterior mean
  Eigen::VectorXd mean;
  Eigen::LLT<Eigen::MatrixXd> precision;  // factor of A
  double shape = 0.0;
  double scale = 0.0;
  long n = 0;

  double sigma2_mean() const { return shape > 1.0 ? scale / (shape - 1.0) : scale / shape; }

  Eigen::VectorXd mean_curve(const Eigen::MatrixXd& points) const { return eval_f(basis, points); }

  /// Equal-tailed marginal credible band of f(x) from the Student-t.
  void pointwise_band(const Eigen::MatrixXd& points, double level, Eigen::VectorXd& lo,
                      Eigen::VectorXd& hi) const {
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("band: level must lie in (0,1)");
    const Eigen::MatrixXd psi = basis_matrix(basis, points);
    const Eigen::VectorXd mu = psi * mean;
    const Eigen::MatrixXd v = precision.matrixL().solve(psi.transpose());
    boost::math::students_t dist(2.0 * shape);
    const double t = boost::math::quantile(dist, 0.5 + 0.5 * level);
    lo.resize(points.rows());
    hi.resize(points.rows());
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const double sd = std::sqrt(scale / shape * v.col(i).squaredNorm());
      lo(i) = mu(i) - t * sd;
      hi(i) = mu(i) + t * sd;
    }
  }

  /// Independent joint draws of (xi, sigma).
  std::vector<KmpParams> sample(int count, Rng& rng) const {
    std::vector<KmpParams> out;
    out.reserve(count);
    const Eigen::Index J = mean.size();
    for (int t = 0; t < count; ++t) {
      const double s2 = 1.0 / rng.gamma(shape, scale);
      Eigen::VectorXd w(J);
      for (Eigen::Index j = 0; j < J; ++j) w(j) = rng.normal();
      KmpParams q = basis;
      q.xi = mean + std::sqrt(s2) * precision.matrixU().solve(w);
      q.sigma = std::sqrt(s2);
      out.push_back(std::move(q));
    }
    return out;
  }
};

inline ConjugatePosterior conjugate_fit(const Dataset& data, const FixedDesignModel& model) {
  model.validate();
  data.validate();
  if (data.n() < 1) throw std::invalid_argument("conjugate_fit: empty dataset");
  ConjugatePosterior post;
  post.basis = model.params();
  post.n = data.n();
  const Eigen::MatrixXd psi = basis_matrix(post.basis, data.x);
  const double nn = static_cast<double>(data.n());
  Eigen::MatrixXd a = psi.transpose() * psi;
  a.diagonal().array() += 1.0 / (nn * nn);
  post.precision.compute(a);
  if (post.precision.info() != Eigen::Success)
    throw std::runtime_error("conjugate_fit: precision factorization failed");
  const Eigen::VectorXd c = psi.transpose() * data.y;
  post.mean = post.precision.solve(c);
  post.basis.xi = post.mean;
  const double quad = std::max(0.0, data.y.squaredNorm() - post.mean.dot(c));
  post.shape = 0.5 * model.a_sigma + 0.5 * nn;
  post.scale = 0.5 * model.b_sigma + 0.5 * quad;
  post.basis.sigma = std::sqrt(post.sigma2_mean());
  return post;
}

/// Model with K chosen by the K_n rule for a declared smoothness alpha.
inline ConjugatePosterior conjugate_fit(const Dataset& data, double alpha, int m,
                                        double a_sigma = 2.0, double b_sigma = 2.0) {
  FixedDesignModel model;
  model.p = data.p();
  model.K = choose_Kn(data.n(), alpha, model.p);
  model.m = m;
  model.a_sigma = a_sigma;
  model.b_sigma = b_sigma;
  return conjugate_fit(data, model);
}

/// Root-mean-square discrepancy between f and f0 over the design points.
inline double empirical_l2(const std::function<double(std::span<const double>)>& f,
                           const std::function<double(std::span<const double>)>& f0,
                           const Eigen::MatrixXd& design) {
  if (design.rows() == 0) throw std::invalid_argument("empirical_l2: empty design");
  double acc = 0.0;
  std::vector<double> x(design.cols());
  for (Eigen::Index i = 0; i < design.rows(); ++i) {
    for (Eigen::Index j = 0; j < design.cols(); ++j) x[j] = design(i, j);
    const double d = f(x) - f0(x);
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(design.rows()));
}

inline double empirical_l2(const Eigen::VectorXd& f_values, const Eigen::VectorXd& f0_values) {
  if (f_values.size() == 0 || f_values.size() != f0_values.size())
    throw std::invalid_argument("empirical_l2: size mismatch");
  return std::sqrt((f_values - f0_values).squaredNorm() / static_cast<double>(f_values.size()));
}

}  // namespace kmp
