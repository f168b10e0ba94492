#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace kmp {

/// Boxed kernel profiles. Every profile maps the sup-norm radius r >= 0 to
/// [0, 1], vanishes for r >= 1 and is nonincreasing in r.
enum class KernelFamily { bump, triangle, epanechnikov };

inline std::string_view to_string(KernelFamily f) {
  switch (f) {
    case KernelFamily::bump: return "bump";
    case KernelFamily::triangle: return "triangle";
    case KernelFamily::epanechnikov: return "epanechnikov";
  }
  return "bump";
}

inline KernelFamily kernel_family_from_string(std::string_view s) {
  if (s == "bump") return KernelFamily::bump;
  if (s == "triangle") return KernelFamily::triangle;
  if (s == "epanechnikov") return KernelFamily::epanechnikov;
  throw std::invalid_argument("unknown kernel family: " + std::string(s));
}

/// Log of the kernel profile at radius r; -inf outside the open unit ball.
/// Working in log space lets the weight computation rescale by the largest
/// kernel value without underflow for the bump profile.
inline double log_profile(KernelFamily f, double r) {
  if (!(r < 1.0)) return -std::numeric_limits<double>::infinity();
  switch (f) {
    case KernelFamily::bump: return -1.0 / (1.0 - r * r);
    case KernelFamily::triangle: return std::log1p(-r);
    case KernelFamily::epanechnikov: return std::log1p(-r * r);
  }
  return -std::numeric_limits<double>::infinity();
}

inline double profile(KernelFamily f, double r) {
  if (!(r < 1.0)) return 0.0;
  switch (f) {
    case KernelFamily::bump: return std::exp(-1.0 / (1.0 - r * r));
    case KernelFamily::triangle: return 1.0 - r;
    case KernelFamily::epanechnikov: return 1.0 - r * r;
  }
  return 0.0;
}

struct KernelSpec {
  KernelFamily family = KernelFamily::bump;
  double bandwidth = 1.0;

  void validate() const {
    if (!(bandwidth > 0.0) || !std::isfinite(bandwidth))
      throw std::invalid_argument("kernel bandwidth must be positive and finite");
  }
};

inline double sup_norm(std::span<const double> v) {
  double r = 0.0;
  for (double c : v) {
    if (!std::isfinite(c)) throw std::domain_error("kernel argument is not finite");
    r = std::max(r, std::abs(c));
  }
  return r;
}

/// phi_h(v) = phi(||v||_inf / h).
inline double eval_kernel(const KernelSpec& spec, std::span<const double> v) {
  spec.validate();
  return profile(spec.family, sup_norm(v) / spec.bandwidth);
}

inline double eval_kernel(const KernelSpec& spec, double v) {
  return eval_kernel(spec, std::span<const double>(&v, 1));
}

}  // namespace kmp
