#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace kmp {

/// Seeded generator handed explicitly to every stochastic routine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double uniform() { return unif_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unif_(engine_); }
  double normal() { return norm_(engine_); }
  double normal(double mean, double sd) { return mean + sd * norm_(engine_); }
  double exponential(double rate) { return -std::log1p(-unif_(engine_)) / rate; }
  double gamma(double shape, double rate) {
    std::gamma_distribution<double> g(shape, 1.0 / rate);
    return g(engine_);
  }
  int poisson(double lambda) {
    std::poisson_distribution<int> d(lambda);
    return d(engine_);
  }
  std::uint64_t next() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> norm_{0.0, 1.0};
};

namespace detail {

// Standard normal restricted to [a, b] with a >= 0 (right tail).
inline double right_tail_normal(Rng& rng, double a, double b) {
  if (a < 0.5 && b - a >= 1.0) {
    while (true) {
      const double z = rng.normal();
      if (z >= a && z <= b) return z;
    }
  }
  if (b - a < 1.0 / std::max(a, 1.0)) {
    while (true) {
      const double z = rng.uniform(a, b);
      if (std::log(rng.uniform()) <= 0.5 * (a * a - z * z)) return z;
    }
  }
  // Exponential proposal with the optimal rate.
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  while (true) {
    const double z = a + rng.exponential(lambda);
    if (z > b) continue;
    const double d = z - lambda;
    if (std::log(rng.uniform()) <= -0.5 * d * d) return z;
  }
}

}  // namespace detail

/// Standard normal truncated to [a, b] (either bound may be infinite).
inline double truncated_standard_normal(Rng& rng, double a, double b) {
  if (!(a < b)) {
    if (a == b) return a;
    throw std::invalid_argument("truncated normal: empty interval");
  }
  if (a >= 0.0) return detail::right_tail_normal(rng, a, b);
  if (b <= 0.0) return -detail::right_tail_normal(rng, -b, -a);
  if (b - a >= 1.0) {
    while (true) {
      const double z = rng.normal();
      if (z >= a && z <= b) return z;
    }
  }
  while (true) {
    const double z = rng.uniform(a, b);
    if (std::log(rng.uniform()) <= -0.5 * z * z) return z;
  }
}

/// N(mean, sd^2) truncated to [lo, hi].
inline double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  if (sd == 0.0) return std::clamp(mean, lo, hi);
  return mean + sd * truncated_standard_normal(rng, (lo - mean) / sd, (hi - mean) / sd);
}

/// Gamma(shape, rate) truncated to [lo, hi]. Inverse-CDF when the truncated
/// mass is resolvable in double precision, otherwise rejection on log t
/// against a tangent envelope of the (concave) log density.
inline double truncated_gamma(Rng& rng, double shape, double rate, double lo, double hi) {
  if (!(shape > 0.0) || !(rate > 0.0)) throw std::invalid_argument("truncated gamma: bad params");
  if (lo < 0.0) lo = 0.0;
  if (!(lo < hi)) {
    if (lo == hi) return lo;
    throw std::invalid_argument("truncated gamma: empty interval");
  }
  if (lo == 0.0 && hi == std::numeric_limits<double>::infinity()) return rng.gamma(shape, rate);

  namespace bm = boost::math;
  const double xl = rate * lo;
  const double xu = std::isinf(hi) ? std::numeric_limits<double>::infinity() : rate * hi;
  const double pl = xl == 0.0 ? 0.0 : bm::gamma_p(shape, xl);
  const double pu = std::isinf(xu) ? 1.0 : bm::gamma_p(shape, xu);
  if (pl < 0.5) {
    if (pu - pl > 1e-10 * std::max(pu, 1e-300) && pu > 1e-280) {
      const double u = pl + (pu - pl) * rng.uniform();
      if (u > 0.0 && u < 1.0) {
        const double t = bm::gamma_p_inv(shape, u) / rate;
        return std::clamp(t, lo, hi);
      }
    }
  } else {
    const double ql = bm::gamma_q(shape, xl);
    const double qu = std::isinf(xu) ? 0.0 : bm::gamma_q(shape, xu);
    if (ql - qu > 1e-10 * ql && ql > 1e-280) {
      const double v = qu + (ql - qu) * rng.uniform();
      if (v > 0.0 && v < 1.0) {
        const double t = bm::gamma_q_inv(shape, v) / rate;
        return std::clamp(t, lo, hi);
      }
    }
  }

  // Density of s = log t is exp(shape * s - rate * e^s), concave in s.
  const double sl = lo > 0.0 ? std::log(lo) : -745.0;
  const double su = std::isinf(hi) ? std::log(std::numeric_limits<double>::max()) : std::log(hi);
  auto logd = [&](double s) { return shape * s - rate * std::exp(s); };
  const double mode = std::log(shape / rate);
  if (mode >= su || mode <= sl) {
    const double anchor = mode >= su ? su : sl;
    const double slope = shape - rate * std::exp(anchor);
    const double width = su - sl;
    while (true) {
      // Truncated exponential away from the anchor with rate |slope|.
      const double lam = std::abs(slope);
      const double u = rng.uniform();
      double d;
      if (lam * width < 1e-12) {
        d = u * width;
      } else {
        d = -std::log1p(-u * (-std::expm1(-lam * width))) / lam;
      }
      const double s = mode >= su ? su - d : sl + d;
      const double envelope = logd(anchor) + slope * (s - anchor);
      if (std::log(rng.uniform()) <= logd(s) - envelope) return std::clamp(std::exp(s), lo, hi);
    }
  }
  const double top = logd(mode);
  while (true) {
    const double s = rng.uniform(sl, su);
    if (std::log(rng.uniform()) <= logd(s) - top) return std::clamp(std::exp(s), lo, hi);
  }
}

/// Inverse-gamma(shape, scale) on v truncated to [lo, hi]; draws 1/v from
/// the matching truncated gamma.
inline double truncated_inverse_gamma(Rng& rng, double shape, double scale, double lo, double hi) {
  const double tlo = std::isinf(hi) ? 0.0 : 1.0 / hi;
  const double thi = lo > 0.0 ? 1.0 / lo : std::numeric_limits<double>::infinity();
  const double t = truncated_gamma(rng, shape, scale, tlo, thi);
  return std::clamp(1.0 / t, lo, hi);
}

/// Folds t back into [lo, hi] by mirror reflection at the boundaries.
inline double reflect_into(double t, double lo, double hi) {
  const double w = hi - lo;
  if (w <= 0.0) return lo;
  double u = std::fmod(t - lo, 2.0 * w);
  if (u < 0.0) u += 2.0 * w;
  return u <= w ? lo + u : lo + 2.0 * w - u;
}

}  // namespace kmp
