#pragma once

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>
#include "kmp/kernel.hpp"
#include "kmp/model.hpp"
#include "kmp/random.hpp"

namespace kmp {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class KPriorFamily { geometric, poisson };
enum class MuPriorFamily { uniform, truncated_normal };
enum class XiPriorFamily { truncated_normal, uniform };

/// Hyperparameters of the hierarchical prior and the sampler proposals.
///
/// sigma_shape/sigma_scale parameterise an inverse-gamma density on sigma^2,
/// pi(sigma^2) ∝ (sigma^2)^{-shape-1} exp(-scale / sigma^2), truncated to
/// [sigma_lo^2, sigma_hi^2]. With xi_scale_with_sigma the coefficient prior
/// is N(0, (xi_sd * sigma)^2), which requires B = inf (conjugate form).
struct PriorConfig {
  double B = 50.0;
  int m = 2;
  double h_lo = 1.2;
  double h_hi = 2.0;
  double sigma_lo = 1e-3;
  double sigma_hi = 10.0;
  KernelFamily kernel = KernelFamily::bump;

  KPriorFamily k_family = KPriorFamily::geometric;
  double k_rho = 0.5;
  double k_lambda = 5.0;

  MuPriorFamily mu_family = MuPriorFamily::uniform;
  double mu_sd = 0.5;

  XiPriorFamily xi_family = XiPriorFamily::truncated_normal;
  double xi_sd = 10.0;
  bool xi_scale_with_sigma = false;

  double sigma_shape = 1.0;
  double sigma_scale = 1.0;

  double beta_sd = 10.0;

  double step_mu = 0.1;
  double step_kh = -1.0;  // negative: 0.05 * (h_hi - h_lo)

  int k_min = 6;
  int k_max = 15;

  double kh_step() const { return step_kh >= 0.0 ? step_kh : 0.05 * (h_hi - h_lo); }

  void validate() const {
    if (!(B >= 0.0)) throw ConfigError("prior: B must be >= 0");
    if (m < 0) throw ConfigError("prior: m must be >= 0");
    if (!(h_lo > 1.0) || !(h_hi > h_lo) || !std::isfinite(h_hi))
      throw ConfigError("prior: need 1 < h_lo < h_hi < inf");
    if (!(sigma_lo >= 0.0) || !(sigma_hi > sigma_lo))
      throw ConfigError("prior: need 0 <= sigma_lo < sigma_hi");
    if (k_family == KPriorFamily::geometric && !(k_rho > 0.0 && k_rho < 1.0))
      throw ConfigError("prior: geometric rho must lie in (0,1)");
    if (k_family == KPriorFamily::poisson && !(k_lambda > 0.0))
      throw ConfigError("prior: poisson lambda must be positive");
    if (mu_family == MuPriorFamily::truncated_normal && !(mu_sd > 0.0))
      throw ConfigError("prior: mu_sd must be positive");
    if (xi_family == XiPriorFamily::truncated_normal && !(xi_sd > 0.0))
      throw ConfigError("prior: xi_sd must be positive");
    if (xi_family == XiPriorFamily::uniform && !std::isfinite(B))
      throw ConfigError("prior: uniform coefficient prior needs finite B");
    if (xi_scale_with_sigma &&
        (xi_family != XiPriorFamily::truncated_normal || std::isfinite(B)))
      throw ConfigError("prior: sigma-scaled coefficient prior requires normal family and B = inf");
    if (!(sigma_shape > 0.0) || !(sigma_scale > 0.0))
      throw ConfigError("prior: inverse-gamma shape and scale must be positive");
    if (!(beta_sd > 0.0)) throw ConfigError("prior: beta_sd must be positive");
    if (!(step_mu >= 0.0)) throw ConfigError("prior: step_mu must be >= 0");
    if (k_min < 1 || k_max < k_min) throw ConfigError("prior: need 1 <= k_min <= k_max");
  }

  /// Coefficient prior standard deviation at noise scale sigma.
  double xi_prior_sd(double sigma) const { return xi_scale_with_sigma ? xi_sd * sigma : xi_sd; }
};

/// True when params lies in the support of the prior for its K.
inline bool in_prior_support(const PriorConfig& cfg, const KmpParams& q) {
  const double kh = q.scaled_bandwidth();
  if (!(kh >= cfg.h_lo - 1e-12 && kh <= cfg.h_hi + 1e-12)) return false;
  if (!(q.sigma >= cfg.sigma_lo && q.sigma <= cfg.sigma_hi) || !(q.sigma > 0.0)) return false;
  for (Eigen::Index i = 0; i < q.xi.size(); ++i)
    if (!(std::abs(q.xi(i)) <= cfg.B)) return false;
  for (int b = 0; b < q.num_blocks(); ++b)
    for (int j = 0; j < q.p; ++j)
      if (!(std::abs(q.mu_tilde(b, j)) <= 1.0 + 1e-9)) return false;
  return true;
}

inline double sample_mu_tilde(const PriorConfig& cfg, Rng& rng) {
  if (cfg.mu_family == MuPriorFamily::uniform) return rng.uniform(-1.0, 1.0);
  return truncated_normal(rng, 0.0, cfg.mu_sd, -1.0, 1.0);
}

inline double sample_xi(const PriorConfig& cfg, double sigma, Rng& rng) {
  if (cfg.xi_family == XiPriorFamily::uniform) return rng.uniform(-cfg.B, cfg.B);
  return truncated_normal(rng, 0.0, cfg.xi_prior_sd(sigma), -cfg.B, cfg.B);
}

inline double sample_sigma(const PriorConfig& cfg, Rng& rng) {
  const double v = truncated_inverse_gamma(rng, cfg.sigma_shape, cfg.sigma_scale,
                                           cfg.sigma_lo * cfg.sigma_lo, cfg.sigma_hi * cfg.sigma_hi);
  return std::sqrt(v);
}

/// One draw of (h, mu, xi, sigma) given K.
inline KmpParams sample_prior(const PriorConfig& cfg, int K, Rng& rng, int p = 1) {
  cfg.validate();
  if (K < 1) throw ConfigError("sample_prior: K must be >= 1");
  const double kh = rng.uniform(cfg.h_lo, cfg.h_hi);
  KmpParams q = KmpParams::centered(K, p, cfg.m, kh, cfg.kernel);
  for (int b = 0; b < q.num_blocks(); ++b)
    for (int j = 0; j < p; ++j) q.set_mu_tilde(b, j, sample_mu_tilde(cfg, rng));
  q.sigma = sample_sigma(cfg, rng);
  for (Eigen::Index i = 0; i < q.xi.size(); ++i) q.xi(i) = sample_xi(cfg, q.sigma, rng);
  return q;
}

inline double log_prior_xi(const PriorConfig& cfg, double xi, double sigma) {
  if (!(std::abs(xi) <= cfg.B)) return -kInf;
  if (cfg.xi_family == XiPriorFamily::uniform) return 0.0;
  const double sd = cfg.xi_prior_sd(sigma);
  return -0.5 * xi * xi / (sd * sd) - (cfg.xi_scale_with_sigma ? std::log(sigma) : 0.0);
}

inline double log_prior_mu_tilde(const PriorConfig& cfg, double t) {
  if (!(std::abs(t) <= 1.0 + 1e-9)) return -kInf;
  if (cfg.mu_family == MuPriorFamily::uniform) return 0.0;
  return -0.5 * t * t / (cfg.mu_sd * cfg.mu_sd);
}

/// Log density of sigma^2 under the (truncated) inverse-gamma prior.
inline double log_prior_sigma(const PriorConfig& cfg, double sigma) {
  if (!(sigma >= cfg.sigma_lo && sigma <= cfg.sigma_hi) || !(sigma > 0.0)) return -kInf;
  const double v = sigma * sigma;
  return -(cfg.sigma_shape + 1.0) * std::log(v) - cfg.sigma_scale / v;
}

/// Sum of component log densities, up to an additive constant for fixed K;
/// -inf outside the support.
inline double log_prior_density(const PriorConfig& cfg, const KmpParams& q) {
  if (!in_prior_support(cfg, q)) return -kInf;
  double lp = log_prior_sigma(cfg, q.sigma);
  for (int b = 0; b < q.num_blocks(); ++b)
    for (int j = 0; j < q.p; ++j) lp += log_prior_mu_tilde(cfg, q.mu_tilde(b, j));
  for (Eigen::Index i = 0; i < q.xi.size(); ++i) lp += log_prior_xi(cfg, q.xi(i), q.sigma);
  return lp;
}

/// Pi(K >= x). Geometric on {1, 2, ...} with success probability rho, or
/// K = 1 + Poisson(lambda).
inline double prior_K_tail(const PriorConfig& cfg, int x) {
  if (x <= 1) return 1.0;
  if (cfg.k_family == KPriorFamily::geometric) return std::pow(1.0 - cfg.k_rho, x - 1);
  // P(Poisson >= x - 1) = regularized lower incomplete gamma P(x - 1, lambda).
  return boost::math::gamma_p(static_cast<double>(x - 1), cfg.k_lambda);
}

inline double prior_K_pmf(const PriorConfig& cfg, int k) {
  if (k < 1) return 0.0;
  if (cfg.k_family == KPriorFamily::geometric) return cfg.k_rho * std::pow(1.0 - cfg.k_rho, k - 1);
  const int j = k - 1;
  return std::exp(j * std::log(cfg.k_lambda) - cfg.k_lambda - std::lgamma(j + 1.0));
}

inline int sample_K(const PriorConfig& cfg, Rng& rng) {
  if (cfg.k_family == KPriorFamily::poisson) return 1 + rng.poisson(cfg.k_lambda);
  const double u = rng.uniform();
  return 1 + static_cast<int>(std::floor(std::log1p(-u) / std::log1p(-cfg.k_rho)));
}

// ---- JSON ---------------------------------------------------------------

namespace detail {

inline double json_double(const nlohmann::json& j) {
  if (j.is_null()) return kInf;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "Infinity") return kInf;
    if (s == "-inf" || s == "-Infinity") return -kInf;
    throw ConfigError("expected a number, got string '" + s + "'");
  }
  if (!j.is_number()) throw ConfigError("expected a number");
  return j.get<double>();
}

inline nlohmann::json json_number(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  if constexpr (std::is_same_v<T, double>) {
    out = json_double(j.at(key));
  } else {
    try {
      out = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
  }
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const PriorConfig& c) {
  using detail::json_number;
  j = nlohmann::json{
      {"B", json_number(c.B)},
      {"m", c.m},
      {"h_lo", c.h_lo},
      {"h_hi", c.h_hi},
      {"sigma_lo", c.sigma_lo},
      {"sigma_hi", json_number(c.sigma_hi)},
      {"kernel", std::string(to_string(c.kernel))},
      {"k_family", c.k_family == KPriorFamily::geometric ? "geometric" : "poisson"},
      {"k_rho", c.k_rho},
      {"k_lambda", c.k_lambda},
      {"mu_family", c.mu_family == MuPriorFamily::uniform ? "uniform" : "truncated_normal"},
      {"mu_sd", c.mu_sd},
      {"xi_family", c.xi_family == XiPriorFamily::uniform ? "uniform" : "truncated_normal"},
      {"xi_sd", c.xi_sd},
      {"xi_scale_with_sigma", c.xi_scale_with_sigma},
      {"sigma_shape", c.sigma_shape},
      {"sigma_scale", c.sigma_scale},
      {"beta_sd", c.beta_sd},
      {"step_mu", c.step_mu},
      {"step_kh", c.kh_step()},
      {"k_min", c.k_min},
      {"k_max", c.k_max},
  };
}

inline void from_json(const nlohmann::json& j, PriorConfig& c) {
  using detail::read_opt;
  if (!j.is_object()) throw ConfigError("prior config must be a JSON object");
  static const char* known[] = {"B",         "m",          "h_lo",     "h_hi",
                                "sigma_lo",  "sigma_hi",   "kernel",   "k_family",
                                "k_rho",     "k_lambda",   "mu_family", "mu_sd",
                                "xi_family", "xi_sd",      "xi_scale_with_sigma",
                                "sigma_shape", "sigma_scale", "beta_sd", "step_mu",
                                "step_kh",   "k_min",      "k_max"};
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown prior config key: " + key);
  }
  read_opt(j, "B", c.B);
  read_opt(j, "m", c.m);
  read_opt(j, "h_lo", c.h_lo);
  read_opt(j, "h_hi", c.h_hi);
  read_opt(j, "sigma_lo", c.sigma_lo);
  read_opt(j, "sigma_hi", c.sigma_hi);
  if (j.contains("kernel")) c.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
  if (j.contains("k_family")) {
    const auto s = j.at("k_family").get<std::string>();
    if (s == "geometric") c.k_family = KPriorFamily::geometric;
    else if (s == "poisson") c.k_family = KPriorFamily::poisson;
    else throw ConfigError("unknown k_family: " + s);
  }
  read_opt(j, "k_rho", c.k_rho);
  read_opt(j, "k_lambda", c.k_lambda);
  if (j.contains("mu_family")) {
    const auto s = j.at("mu_family").get<std::string>();
    if (s == "uniform") c.mu_family = MuPriorFamily::uniform;
    else if (s == "truncated_normal") c.mu_family = MuPriorFamily::truncated_normal;
    else throw ConfigError("unknown mu_family: " + s);
  }
  read_opt(j, "mu_sd", c.mu_sd);
  if (j.contains("xi_family")) {
    const auto s = j.at("xi_family").get<std::string>();
    if (s == "uniform") c.xi_family = XiPriorFamily::uniform;
    else if (s == "truncated_normal") c.xi_family = XiPriorFamily::truncated_normal;
    else throw ConfigError("unknown xi_family: " + s);
  }
  read_opt(j, "xi_sd", c.xi_sd);
  read_opt(j, "xi_scale_with_sigma", c.xi_scale_with_sigma);
  read_opt(j, "sigma_shape", c.sigma_shape);
  read_opt(j, "sigma_scale", c.sigma_scale);
  read_opt(j, "beta_sd", c.beta_sd);
  read_opt(j, "step_mu", c.step_mu);
  read_opt(j, "step_kh", c.step_kh);
  read_opt(j, "k_min", c.k_min);
  read_opt(j, "k_max", c.k_max);
  c.validate();
}

}  // namespace kmp
