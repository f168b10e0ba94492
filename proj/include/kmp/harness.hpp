#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include <chrono>
#include <cmath>
#include <complex>
#include <functional>
#include <mutex>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "kmp/baselines.hpp"
#include "kmp/dataset.hpp"
#include "kmp/fixed_design.hpp"
#include "kmp/io.hpp"
#include "kmp/parallel.hpp"
#include "kmp/plm.hpp"
#include "kmp/posterior.hpp"
#include "kmp/priors.hpp"
#include "kmp/random.hpp"
#include "kmp/sampler.hpp"

namespace kmp {

// ---- truths ------------------------------------------------------------------

inline constexpr long kVolterraTerms = 1000000;

/// sqrt(2) sum_{s=1}^{S} s^{-3/2} sin(s) cos((s - 1/2) pi x), summed
/// directly (s ascending).
inline double volterra_partial_sum(double x, long S) {
  double acc = 0.0;
  for (long s = 1; s <= S; ++s) {
    const double sd = static_cast<double>(s);
    acc += std::sin(sd) / (sd * std::sqrt(sd)) * std::cos((sd - 0.5) * std::numbers::pi * x);
  }
  return std::numbers::sqrt2 * acc;
}

/// Bound on the omitted tail: sqrt(2) sum_{s>S} s^{-3/2} <= 2 sqrt(2) S^{-1/2}.
inline double volterra_tail_bound(long S) { return 2.0 * std::numbers::sqrt2 / std::sqrt(static_cast<double>(S)); }

/// The S-term series tabulated at x_j = j / N, j = 0..N, by one length-2N
/// FFT: cos((s - 1/2) pi j / N) = Re[exp(-i pi j / 2N) exp(2 pi i s j / 2N)].
class VolterraTable {
 public:
  explicit VolterraTable(long S = kVolterraTerms, long N = 1L << 20) : S_(S), N_(N) {
    if (S < 1 || N < 1 || S >= 2 * N) throw std::invalid_argument("volterra table: need 1 <= S < 2N");
    const long M = 2 * N;
    std::vector<std::complex<double>> c(static_cast<std::size_t>(M)), out;
    for (long s = 1; s <= S; ++s) {
      const double sd = static_cast<double>(s);
      c[static_cast<std::size_t>(s)] = std::sin(sd) / (sd * std::sqrt(sd));
    }
    Eigen::FFT<double> fft;
    fft.fwd(out, c);  // sum_s c_s exp(-2 pi i s j / M); conjugate for the + sign
    values_.resize(static_cast<std::size_t>(N + 1));
    for (long j = 0; j <= N; ++j) {
      const double phase = -std::numbers::pi * static_cast<double>(j) / static_cast<double>(M);
      const std::complex<double> v = std::polar(1.0, phase) * std::conj(out[static_cast<std::size_t>(j)]);
      values_[static_cast<std::size_t>(j)] = std::numbers::sqrt2 * v.real();
    }
  }

  long terms() const { return S_; }
  long size() const { return N_; }
  double node(long j) const { return values_.at(static_cast<std::size_t>(j)); }

  /// Linear interpolation between the tabulated nodes.
  double operator()(double x) const {
    if (!(x >= 0.0 && x <= 1.0)) throw std::domain_error("volterra: x outside [0,1]");
    const double u = x * static_cast<double>(N_);
    const long j = std::min(N_ - 1, static_cast<long>(u));
    const double w = u - static_cast<double>(j);
    return (1.0 - w) * values_[static_cast<std::size_t>(j)] + w * values_[static_cast<std::size_t>(j + 1)];
  }

 private:
  long S_;
  long N_;
  std::vector<double> values_;
};

inline const VolterraTable& volterra_table() {
  static const VolterraTable table;
  return table;
}

inline double truth_volterra(double x) { return volterra_table()(x); }

inline constexpr double kPlmAmplitude = 2.5;

inline double truth_plm(double x) {
  return kPlmAmplitude * std::exp(-x) * std::sin(10.0 * std::numbers::pi * x);
}

inline Eigen::VectorXd plm_beta0() {
  Eigen::VectorXd b(8);
  b << 1.0338, 0.1346, 0.2854, 0.6675, 0.6732, 0.5293, -0.5073, -3.3942;
  return b;
}

inline double truth_sine(double x) { return std::sin(2.0 * std::numbers::pi * x); }

// ---- generators ----------------------------------------------------------------

/// y_i = f0(x_i) + N(0, sigma^2) with x_i ~ Unif(0,1)^p.
inline Dataset simulate_regression(const std::function<double(std::span<const double>)>& f0, long n, double sigma,
                                   std::uint64_t seed, int p = 1) {
  if (n < 1 || p < 1 || !(sigma >= 0.0)) throw std::invalid_argument("simulate: bad n/p/sigma");
  Rng rng(seed);
  Dataset d;
  d.x.resize(n, p);
  d.y.resize(n);
  std::vector<double> x(p);
  for (long i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x[j] = d.x(i, j) = rng.uniform();
    d.y(i) = f0(x) + sigma * rng.normal();
  }
  d.provenance = "simulated seed=" + std::to_string(seed);
  return d;
}

inline Dataset simulate_regression(const std::function<double(double)>& f0, long n, double sigma,
                                   std::uint64_t seed) {
  return simulate_regression([&](std::span<const double> x) { return f0(x[0]); }, n, sigma, seed, 1);
}

/// y = z'beta0 + eta0(x) + N(0, sigma^2), z ~ Unif([-1,1]^q), x ~ Unif(0,1).
inline Dataset simulate_plm(long n, std::uint64_t seed, double sigma = 1.0,
                            const Eigen::VectorXd& beta0 = plm_beta0(),
                            const std::function<double(double)>& eta0 = truth_plm) {
  if (n < 1) throw std::invalid_argument("simulate_plm: n must be >= 1");
  Rng rng(seed);
  const Eigen::Index q = beta0.size();
  Dataset d;
  d.x.resize(n, 1);
  d.z.resize(n, q);
  d.y.resize(n);
  for (long i = 0; i < n; ++i) {
    d.x(i, 0) = rng.uniform();
    for (Eigen::Index j = 0; j < q; ++j) d.z(i, j) = rng.uniform(-1.0, 1.0);
    d.y(i) = d.z.row(i).dot(beta0) + eta0(d.x(i, 0)) + sigma * rng.normal();
  }
  d.provenance = "simulated plm seed=" + std::to_string(seed);
  return d;
}

/// Independent stream for (replicate, purpose) pairs; splitmix64 finaliser.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index, std::uint64_t stream) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1) + 0xBF58476D1CE4E5B9ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---- scenarios ---------------------------------------------------------------------

enum class TruthKind { volterra_series, bump_plm, sine, custom };

inline const char* to_string(TruthKind t) {
  switch (t) {
    case TruthKind::volterra_series: return "volterra_series";
    case TruthKind::bump_plm: return "bump_plm";
    case TruthKind::sine: return "sine";
    case TruthKind::custom: return "custom";
  }
  return "?";
}

inline TruthKind truth_from_string(const std::string& s) {
  if (s == "volterra_series") return TruthKind::volterra_series;
  if (s == "bump_plm") return TruthKind::bump_plm;
  if (s == "sine") return TruthKind::sine;
  if (s == "custom") return TruthKind::custom;
  throw ConfigError("unknown truth: " + s);
}

struct Window {
  double lo = 0.0;
  double hi = 1.0;
};

/// Replicated experiment. Replicate r simulates with seed base + r; chains
/// and baselines draw from derived streams of that seed.
struct ScenarioSpec {
  TruthKind truth = TruthKind::volterra_series;
  std::function<double(double)> custom_truth;  // truth == custom only
  long n = 1000;
  double noise_sd = 0.2;
  int replicates = 100;
  std::uint64_t seed = 1;
  /// kmp (pointwise and l2set bands), local_linear, nw, gp_se, gp_matern32,
  /// gp_matern52, fixed_design, oracle, exact.
  std::vector<std::string> estimators{"kmp"};
  int grid_size = 1000;
  std::vector<Window> windows{{0.30, 0.35}, {0.50, 0.90}};
  double level = 0.95;
  PriorConfig prior;
  McmcConfig mcmc;
  std::optional<int> K;  // fixed K; otherwise selected by DIC on replicate 0
  bool select_per_replicate = false;
  GpConfig gp;
  LocalFitConfig local;
  double fixed_design_alpha = 1.0;
  unsigned threads = default_threads();

  void validate() const {
    if (replicates < 1) throw ConfigError("scenario: replicates must be >= 1");
    if (n < 2) throw ConfigError("scenario: n must be >= 2");
    if (!(noise_sd > 0.0)) throw ConfigError("scenario: noise_sd must be positive");
    if (grid_size < 2) throw ConfigError("scenario: grid_size must be >= 2");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("scenario: level must lie in (0,1)");
    if (estimators.empty()) throw ConfigError("scenario: no estimators");
    if (truth == TruthKind::custom && !custom_truth) throw ConfigError("scenario: custom truth not set");
    if (K && *K < 1) throw ConfigError("scenario: K must be >= 1");
    for (const auto& w : windows)
      if (!(w.lo >= 0.0 && w.lo <= w.hi && w.hi <= 1.0)) throw ConfigError("scenario: bad window");
    static const char* known[] = {"kmp",        "local_linear", "nw",    "gp_se", "gp_matern32",
                                  "gp_matern52", "fixed_design", "oracle", "exact"};
    for (const auto& e : estimators) {
      bool ok = false;
      for (const char* k : known) ok = ok || e == k;
      if (!ok) throw ConfigError("scenario: unknown estimator " + e);
    }
    prior.validate();
    mcmc.validate();
  }

  std::function<double(double)> truth_fn() const {
    switch (truth) {
      case TruthKind::volterra_series: return truth_volterra;
      case TruthKind::bump_plm: return truth_plm;
      case TruthKind::sine: return truth_sine;
      case TruthKind::custom: return custom_truth;
    }
    return {};
  }

  Dataset simulate(int replicate) const {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(replicate);
    if (truth == TruthKind::bump_plm) return simulate_plm(n, s, noise_sd, plm_beta0(), truth_fn());
    return simulate_regression(truth_fn(), n, noise_sd, s);
  }
};

inline void to_json(nlohmann::json& j, const ScenarioSpec& s) {
  nlohmann::json windows = nlohmann::json::array();
  for (const auto& w : s.windows) windows.push_back({w.lo, w.hi});
  j = {{"truth", to_string(s.truth)},
       {"n", s.n},
       {"noise_sd", s.noise_sd},
       {"replicates", s.replicates},
       {"seed", s.seed},
       {"estimators", s.estimators},
       {"grid_size", s.grid_size},
       {"windows", windows},
       {"level", s.level},
       {"prior", s.prior},
       {"mcmc", s.mcmc},
       {"K", s.K ? nlohmann::json(*s.K) : nlohmann::json(nullptr)},
       {"select_per_replicate", s.select_per_replicate},
       {"gp", s.gp},
       {"local", s.local},
       {"fixed_design_alpha", s.fixed_design_alpha}};
  if (s.truth == TruthKind::volterra_series) {
    j["truth_terms"] = kVolterraTerms;
    j["truth_tail_bound"] = volterra_tail_bound(kVolterraTerms);
  }
  if (s.truth == TruthKind::bump_plm) {
    j["eta0_amplitude"] = kPlmAmplitude;
    j["eta0_amplitude_note"] = "2.5; a 2.4 variant of this truth also circulates";
  }
}

inline void from_json(const nlohmann::json& j, ScenarioSpec& s) {
  detail::reject_unknown(j, {"truth", "n", "noise_sd", "replicates", "seed", "estimators", "grid_size", "windows",
                             "level", "prior", "mcmc", "K", "select_per_replicate", "gp", "local",
                             "fixed_design_alpha", "threads", "truth_terms", "truth_tail_bound",
                             "eta0_amplitude", "eta0_amplitude_note"},
                         "scenario");
  if (j.contains("truth")) s.truth = truth_from_string(j.at("truth").get<std::string>());
  detail::read_opt(j, "n", s.n);
  detail::read_opt(j, "noise_sd", s.noise_sd);
  detail::read_opt(j, "replicates", s.replicates);
  detail::read_opt(j, "seed", s.seed);
  detail::read_opt(j, "estimators", s.estimators);
  detail::read_opt(j, "grid_size", s.grid_size);
  if (j.contains("windows")) {
    s.windows.clear();
    for (const auto& w : j.at("windows")) {
      if (!w.is_array() || w.size() != 2) throw ConfigError("scenario: window must be [lo, hi]");
      s.windows.push_back({w[0].get<double>(), w[1].get<double>()});
    }
  }
  detail::read_opt(j, "level", s.level);
  if (j.contains("prior")) s.prior = j.at("prior").get<PriorConfig>();
  if (j.contains("mcmc")) s.mcmc = j.at("mcmc").get<McmcConfig>();
  detail::read_optional(j, "K", s.K);
  detail::read_opt(j, "select_per_replicate", s.select_per_replicate);
  if (j.contains("gp")) s.gp = j.at("gp").get<GpConfig>();
  if (j.contains("local")) s.local = j.at("local").get<LocalFitConfig>();
  detail::read_opt(j, "fixed_design_alpha", s.fixed_design_alpha);
  detail::read_opt(j, "threads", s.threads);
  if (s.threads == 0) s.threads = default_threads();
  s.validate();
}

// ---- coverage --------------------------------------------------------------------

struct EstimatorCoverage {
  std::string name;
  Eigen::VectorXd coverage;  // per grid point, fraction of successful replicates
  Eigen::VectorXd width;     // mean band width per grid point
  Eigen::VectorXd mse;       // per replicate, grid MSE of the point estimate
  std::vector<double> window_coverage;
  std::vector<double> window_width;
  /// Fraction of replicates whose band covers f0 on the whole window.
  std::vector<double> window_simultaneous;
  int replicates_used = 0;
};

struct CoverageReport {
  Eigen::MatrixXd grid;
  Eigen::VectorXd truth;
  std::vector<Window> windows;
  std::vector<EstimatorCoverage> estimators;
  std::vector<int> failed_replicates;
  std::vector<std::string> failure_messages;
  std::vector<int> selected_K;  // per replicate (constant unless selected per replicate)
  double seconds = 0.0;

  const EstimatorCoverage& at(const std::string& name) const {
    for (const auto& e : estimators)
      if (e.name == name) return e;
    throw std::out_of_range("coverage report has no estimator " + name);
  }
};

/// Bands a single estimator produces on one replicate.
using NamedBands = std::vector<std::pair<std::string, CredibleSummary>>;

namespace detail {

inline GpCovariance gp_kind(const std::string& name) {
  if (name == "gp_se") return GpCovariance::squared_exponential;
  if (name == "gp_matern32") return GpCovariance::matern32;
  return GpCovariance::matern52;
}

inline std::vector<std::string> band_names(const std::string& estimator) {
  if (estimator == "kmp") return {"kmp_pointwise", "kmp_l2set"};
  return {estimator};
}

/// Discrepancy data y - z'beta_LS for the baselines under the PLM truth.
inline Dataset nonparametric_part(const Dataset& d) {
  if (!d.has_z()) return d;
  Dataset out = d;
  const Eigen::VectorXd beta = d.z.colPivHouseholderQr().solve(d.y);
  out.y = d.y - d.z * beta;
  out.z.resize(d.n(), 0);
  return out;
}

inline NamedBands fit_estimator(const ScenarioSpec& spec, const std::string& name, const Dataset& data,
                                const Eigen::MatrixXd& grid, const Eigen::VectorXd& truth, int K,
                                std::uint64_t seed) {
  NamedBands out;
  if (name == "oracle" || name == "exact") {
    CredibleSummary s;
    s.grid = grid;
    s.level = spec.level;
    s.mean = truth;
    const double inf = std::numeric_limits<double>::infinity();
    s.lower = name == "oracle" ? Eigen::VectorXd::Constant(truth.size(), -inf) : truth;
    s.upper = name == "oracle" ? Eigen::VectorXd::Constant(truth.size(), inf) : truth;
    out.emplace_back(name, std::move(s));
    return out;
  }
  if (name == "kmp") {
    McmcConfig c = spec.mcmc;
    c.seed = seed;
    PosteriorDraws draws;
    if (data.has_z()) {
      PlmOptions o;
      o.fix_sigma_at_one = spec.noise_sd == 1.0;
      draws = run_plm_chain(c, spec.prior, K, data, o);
    } else {
      draws = run_chain(c, spec.prior, K, data);
    }
    const Eigen::MatrixXd curves = draw_curves(draws, grid);
    out.emplace_back("kmp_pointwise", pointwise_band(curves, grid, spec.level));
    out.emplace_back("kmp_l2set", l2_credible_set(curves, grid, spec.level));
    return out;
  }
  const Dataset np = nonparametric_part(data);
  if (name == "local_linear" || name == "nw") {
    LocalFitConfig lc = spec.local;
    lc.degree = name == "nw" ? 0 : std::max(1, lc.degree);
    const LocalFit f = local_poly_estimate(np, lc, grid);
    out.emplace_back(name, local_fit_band(f, grid, spec.level));
    return out;
  }
  if (name == "fixed_design") {
    const ConjugatePosterior post = conjugate_fit(np, spec.fixed_design_alpha, spec.prior.m);
    CredibleSummary s;
    s.grid = grid;
    s.level = spec.level;
    s.mean = post.mean_curve(grid);
    post.pointwise_band(grid, spec.level, s.lower, s.upper);
    out.emplace_back(name, std::move(s));
    return out;
  }
  GpConfig g = spec.gp;
  g.covariance = gp_kind(name);
  g.seed = seed;
  g.sigma = spec.noise_sd;
  out.emplace_back(name, rescaled_gp_fit(np, g, grid, spec.level).band);
  return out;
}

struct ReplicateResult {
  bool ok = false;
  std::string error;
  int K = 0;
  NamedBands bands;
};

}  // namespace detail

/// K used for the KMP chains when the spec does not fix it: DIC selection
/// over [prior.k_min, prior.k_max] on the given replicate's data.
inline int pilot_K(const ScenarioSpec& spec, const Dataset& data, std::uint64_t seed) {
  McmcConfig c = spec.mcmc;
  c.seed = seed;
  PlmOptions o;
  o.fix_sigma_at_one = spec.noise_sd == 1.0;
  return select_K(data, spec.prior, c, spec.prior.k_min, spec.prior.k_max, data.has_z(), o, spec.threads)
      .report.selected_K;
}

inline CoverageReport run_coverage(const ScenarioSpec& spec) {
  spec.validate();
  const auto t0 = std::chrono::steady_clock::now();
  CoverageReport rep;
  rep.grid = uniform_grid(spec.grid_size);
  rep.windows = spec.windows;
  const auto f0 = spec.truth_fn();
  rep.truth.resize(spec.grid_size);
  for (int g = 0; g < spec.grid_size; ++g) rep.truth(g) = f0(rep.grid(g, 0));

  bool uses_kmp = false;
  for (const auto& e : spec.estimators) uses_kmp = uses_kmp || e == "kmp";
  int shared_K = spec.K.value_or(0);
  if (uses_kmp && !spec.K && !spec.select_per_replicate)
    shared_K = pilot_K(spec, spec.simulate(0), derive_seed(spec.seed, 0, 99));

  const auto R = static_cast<std::size_t>(spec.replicates);
  std::vector<detail::ReplicateResult> results(R);
  // Replicates fan out; each one runs its estimators sequentially.
  parallel_for(R, spec.threads, [&](std::size_t r) {
    auto& res = results[r];
    try {
      const Dataset data = spec.simulate(static_cast<int>(r));
      res.K = shared_K;
      if (uses_kmp && !spec.K && spec.select_per_replicate) {
        ScenarioSpec one = spec;
        one.threads = 1;
        res.K = pilot_K(one, data, derive_seed(spec.seed, r, 99));
      }
      for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
        auto bands = detail::fit_estimator(spec, spec.estimators[e], data, rep.grid, rep.truth, res.K,
                                           derive_seed(spec.seed, r, e));
        for (auto& b : bands) res.bands.push_back(std::move(b));
      }
      res.ok = true;
    } catch (const std::exception& ex) {
      res.error = ex.what();
    }
  });

  int ok = 0;
  for (std::size_t r = 0; r < R; ++r) {
    if (results[r].ok) {
      ++ok;
      rep.selected_K.push_back(results[r].K);
    } else {
      rep.failed_replicates.push_back(static_cast<int>(r));
      rep.failure_messages.push_back(results[r].error);
    }
  }
  if (ok == 0 || static_cast<double>(ok) < 0.9 * static_cast<double>(R))
    throw std::runtime_error("coverage: only " + std::to_string(ok) + " of " + std::to_string(R) +
                             " replicates succeeded" +
                             (rep.failure_messages.empty() ? "" : ": " + rep.failure_messages.front()));

  // Deterministic reduction in replicate order.
  std::vector<std::string> names;
  for (const auto& e : spec.estimators)
    for (const auto& b : detail::band_names(e)) names.push_back(b);
  const Eigen::Index G = spec.grid_size;
  for (const auto& name : names) {
    EstimatorCoverage ec;
    ec.name = name;
    ec.coverage = Eigen::VectorXd::Zero(G);
    ec.width = Eigen::VectorXd::Zero(G);
    ec.mse.resize(ok);
    ec.window_simultaneous.assign(spec.windows.size(), 0.0);
    int used = 0;
    for (std::size_t r = 0; r < R; ++r) {
      if (!results[r].ok) continue;
      const CredibleSummary* s = nullptr;
      for (const auto& [n, b] : results[r].bands)
        if (n == name) s = &b;
      if (!s) throw std::logic_error("coverage: missing band " + name);
      for (Eigen::Index g = 0; g < G; ++g) {
        if (s->lower(g) <= rep.truth(g) && rep.truth(g) <= s->upper(g)) ec.coverage(g) += 1.0;
        ec.width(g) += s->upper(g) - s->lower(g);
      }
      ec.mse(used) = (s->mean - rep.truth).squaredNorm() / static_cast<double>(G);
      for (std::size_t w = 0; w < spec.windows.size(); ++w) {
        bool all = true;
        for (Eigen::Index g = 0; g < G; ++g) {
          const double x = rep.grid(g, 0);
          if (x < spec.windows[w].lo || x > spec.windows[w].hi) continue;
          all = all && s->lower(g) <= rep.truth(g) && rep.truth(g) <= s->upper(g);
        }
        ec.window_simultaneous[w] += all ? 1.0 : 0.0;
      }
      ++used;
    }
    ec.replicates_used = used;
    ec.coverage /= used;
    ec.width /= used;
    for (auto& v : ec.window_simultaneous) v /= used;
    for (const auto& w : spec.windows) {
      double c = 0.0, wd = 0.0;
      int cnt = 0;
      for (Eigen::Index g = 0; g < G; ++g) {
        const double x = rep.grid(g, 0);
        if (x < w.lo || x > w.hi) continue;
        c += ec.coverage(g);
        wd += ec.width(g);
        ++cnt;
      }
      ec.window_coverage.push_back(cnt ? c / cnt : std::numeric_limits<double>::quiet_NaN());
      ec.window_width.push_back(cnt ? wd / cnt : std::numeric_limits<double>::quiet_NaN());
    }
    rep.estimators.push_back(std::move(ec));
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

inline nlohmann::json coverage_json(const CoverageReport& r) {
  nlohmann::json est = nlohmann::json::array();
  for (const auto& e : r.estimators) {
    nlohmann::json windows = nlohmann::json::array();
    for (std::size_t w = 0; w < r.windows.size(); ++w)
      windows.push_back({{"lo", r.windows[w].lo},
                         {"hi", r.windows[w].hi},
                         {"coverage", e.window_coverage[w]},
                         {"width", e.window_width[w]},
                         {"simultaneous_coverage", e.window_simultaneous[w]}});
    est.push_back({{"name", e.name},
                   {"replicates_used", e.replicates_used},
                   {"mean_coverage", e.coverage.mean()},
                   {"mean_width", e.width.mean()},
                   {"median_mse", quantile(std::vector<double>(e.mse.data(), e.mse.data() + e.mse.size()), 0.5)},
                   {"windows", windows}});
  }
  return {{"estimators", est},
          {"failed_replicates", r.failed_replicates},
          {"failure_messages", r.failure_messages},
          {"selected_K", r.selected_K},
          {"seconds", r.seconds}};
}

/// Per grid point: x, truth, then coverage and width for every estimator.
inline std::string coverage_csv(const CoverageReport& r) {
  std::vector<std::string> header{"x", "truth"};
  for (const auto& e : r.estimators) {
    header.push_back(e.name + "_coverage");
    header.push_back(e.name + "_width");
  }
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index g = 0; g < r.grid.rows(); ++g) {
    std::vector<std::string> row{format_double(r.grid(g, 0)), format_double(r.truth(g))};
    for (const auto& e : r.estimators) {
      row.push_back(format_double(e.coverage(g)));
      row.push_back(format_double(e.width(g)));
    }
    rows.push_back(std::move(row));
  }
  return write_csv_string(header, rows);
}

// ---- benchmark ---------------------------------------------------------------------

struct BenchmarkRow {
  std::string estimator;
  double mse = 0.0;
  double seconds = 0.0;        // the chain at the reported K (or the GP chain)
  double total_seconds = 0.0;  // including K selection
  int K = 0;
  double acceptance = 0.0;
};

struct BenchmarkReport {
  std::vector<BenchmarkRow> rows;
  std::optional<DicReport> dic;
  long n = 0;
  double noise_sd = 0.0;
  long burnin = 0;
  long samples = 0;

  const BenchmarkRow& at(const std::string& name) const {
    for (const auto& r : rows)
      if (r.estimator == name) return r;
    throw std::out_of_range("benchmark has no estimator " + name);
  }
};

/// KMP and the rescaled GPs on one simulated dataset with identical
/// burn-in / sample counts; grid MSE against the truth and wall-clock.
inline BenchmarkReport run_benchmark(const ScenarioSpec& spec) {
  spec.validate();
  BenchmarkReport rep;
  rep.n = spec.n;
  rep.noise_sd = spec.noise_sd;
  rep.burnin = spec.mcmc.burnin;
  rep.samples = spec.mcmc.samples;
  const Dataset data = spec.simulate(0);
  const Eigen::MatrixXd grid = uniform_grid(spec.grid_size);
  const auto f0 = spec.truth_fn();
  Eigen::VectorXd truth(spec.grid_size);
  for (int g = 0; g < spec.grid_size; ++g) truth(g) = f0(grid(g, 0));
  auto mse = [&](const Eigen::VectorXd& m) { return (m - truth).squaredNorm() / static_cast<double>(truth.size()); };

  for (std::size_t e = 0; e < spec.estimators.size(); ++e) {
    const std::string& name = spec.estimators[e];
    const std::uint64_t seed = derive_seed(spec.seed, 0, e);
    BenchmarkRow row;
    row.estimator = name;
    if (name == "kmp") {
      McmcConfig c = spec.mcmc;
      c.seed = seed;
      const auto t0 = std::chrono::steady_clock::now();
      PosteriorDraws draws;
      if (spec.K) {
        draws = run_chain(c, spec.prior, *spec.K, data);
      } else {
        SelectionResult sel = select_K(data, spec.prior, c, spec.prior.k_min, spec.prior.k_max, false, {}, spec.threads);
        rep.dic = sel.report;
        draws = std::move(sel.best);
      }
      row.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.seconds = draws.seconds;
      row.K = draws.K;
      row.acceptance = draws.acceptance.mu_proposed ? static_cast<double>(draws.acceptance.mu_accepted) /
                                                          static_cast<double>(draws.acceptance.mu_proposed)
                                                    : 0.0;
      row.mse = mse(pointwise_band(draws, grid, spec.level).mean);
    } else if (name.rfind("gp_", 0) == 0) {
      GpConfig g = spec.gp;
      g.covariance = detail::gp_kind(name);
      g.seed = seed;
      g.sigma = spec.noise_sd;
      g.burnin = spec.mcmc.burnin;
      g.samples = spec.mcmc.samples;
      const GpFit fit = rescaled_gp_fit(data, g, grid, spec.level);
      row.seconds = row.total_seconds = fit.seconds;
      row.acceptance = fit.acceptance_rate;
      row.mse = mse(fit.band.mean);
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      const NamedBands b = detail::fit_estimator(spec, name, data, grid, truth, 0, seed);
      row.seconds = row.total_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      row.mse = mse(b.front().second.mean);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

inline nlohmann::json benchmark_json(const BenchmarkReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& b : r.rows)
    rows.push_back({{"estimator", b.estimator},
                    {"mse", b.mse},
                    {"seconds", b.seconds},
                    {"total_seconds", b.total_seconds},
                    {"K", b.K},
                    {"acceptance", b.acceptance}});
  nlohmann::json j{{"n", r.n}, {"noise_sd", r.noise_sd}, {"burnin", r.burnin}, {"samples", r.samples}, {"rows", rows}};
  if (r.dic) j["dic"] = dic_json(*r.dic);
  return j;
}

}  // namespace kmp
