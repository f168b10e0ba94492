// Command-line front end: fit, fit-plm, fit-fixed, sieve-mle, select-k,
// coverage, benchmark, predict.

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "kmp/kmp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Args {
  std::string command;
  std::vector<std::string> argv;
  std::string data;
  std::string config;
  std::string out = "kmp_out";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
  std::optional<int> K;
  int k_min = 0;
  int k_max = 0;
  std::string chain;
  bool wage = false;
};

/// Everything a run can be configured with; each command reads its part.
struct RunConfig {
  kmp::CsvSchema schema;
  bool schema_given = false;
  kmp::PriorConfig prior;
  kmp::McmcConfig mcmc;
  std::optional<int> K;
  double level = 0.95;
  int grid_size = 200;
  bool fix_sigma_at_one = true;
  kmp::FixedDesignModel fixed;
  bool fixed_K_given = false;
  double alpha = 1.0;
  kmp::SieveConfig sieve;
  nlohmann::json scenario = json::object();
};

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  const json j = kmp::read_json(path);
  kmp::detail::reject_unknown(j, {"schema", "prior", "mcmc", "K", "level", "grid_size", "fix_sigma_at_one",
                                  "fixed_design", "alpha", "sieve", "scenario"},
                              "config");
  if (j.contains("schema")) {
    c.schema = j.at("schema").get<kmp::CsvSchema>();
    c.schema_given = true;
  }
  if (j.contains("prior")) c.prior = j.at("prior").get<kmp::PriorConfig>();
  if (j.contains("mcmc")) c.mcmc = j.at("mcmc").get<kmp::McmcConfig>();
  kmp::detail::read_optional(j, "K", c.K);
  kmp::detail::read_opt(j, "level", c.level);
  kmp::detail::read_opt(j, "grid_size", c.grid_size);
  kmp::detail::read_opt(j, "fix_sigma_at_one", c.fix_sigma_at_one);
  if (j.contains("fixed_design")) {
    c.fixed = j.at("fixed_design").get<kmp::FixedDesignModel>();
    c.fixed_K_given = j.at("fixed_design").contains("K");
  }
  kmp::detail::read_opt(j, "alpha", c.alpha);
  if (j.contains("sieve")) c.sieve = j.at("sieve").get<kmp::SieveConfig>();
  if (j.contains("scenario")) c.scenario = j.at("scenario");
  if (!(c.level > 0.0 && c.level < 1.0)) throw kmp::ConfigError("config: level must lie in (0,1)");
  if (c.grid_size < 2) throw kmp::ConfigError("config: grid_size must be >= 2");
  return c;
}

json config_json(const RunConfig& c) {
  return {{"schema", c.schema},
          {"prior", c.prior},
          {"mcmc", c.mcmc},
          {"K", c.K ? json(*c.K) : json(nullptr)},
          {"level", c.level},
          {"grid_size", c.grid_size},
          {"fix_sigma_at_one", c.fix_sigma_at_one},
          {"fixed_design", c.fixed},
          {"alpha", c.alpha},
          {"sieve", c.sieve},
          {"scenario", c.scenario}};
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

class Run {
 public:
  explicit Run(const Args& a) : args_(a), t0_(std::chrono::steady_clock::now()), started_(utc_now()) {
    fs::create_directories(a.out);
  }

  void write(const std::string& name, const std::string& contents) {
    kmp::atomic_write(fs::path(args_.out) / name, contents);
    outputs_.push_back(name);
  }
  void write(const std::string& name, const json& j) { write(name, j.dump(2) + "\n"); }

  void finish(const json& resolved, const json& extra = json::object()) {
    json m{{"command", args_.command},
           {"argv", args_.argv},
           {"data", args_.data.empty() ? json(nullptr) : json(args_.data)},
           {"config_file", args_.config.empty() ? json(nullptr) : json(args_.config)},
           {"seed", args_.seed ? json(*args_.seed) : json(nullptr)},
           {"threads", args_.threads},
           {"resolved_config", resolved},
           {"versions", kmp::version_json()},
           {"started_utc", started_},
           {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count()},
           {"outputs", outputs_}};
    for (const auto& [k, v] : extra.items()) m[k] = v;
    write("manifest.json", m);
  }

 private:
  const Args& args_;
  std::chrono::steady_clock::time_point t0_;
  std::string started_;
  std::vector<std::string> outputs_;
};

std::uint64_t need_seed(const Args& a) {
  if (!a.seed) throw kmp::ConfigError(a.command + ": --seed is required");
  return *a.seed;
}

kmp::Dataset need_data(const Args& a, const RunConfig& c, bool want_z) {
  if (a.data.empty()) throw kmp::ConfigError(a.command + ": --data is required");
  const kmp::Table t = kmp::read_table(fs::path(a.data));
  kmp::CsvSchema s = c.schema;
  if (want_z && !c.schema_given) {
    // Every column other than x and y is a linear covariate.
    s.z.clear();
    for (const auto& h : t.header)
      if (h != "x" && h != "y") s.z.push_back(h);
  }
  kmp::Dataset d = kmp::dataset_from_table(t, s);
  d.provenance = "csv:" + a.data;
  return d;
}

Eigen::MatrixXd summary_grid(const kmp::Dataset& d, const RunConfig& c) {
  return d.p() == 1 ? kmp::uniform_grid(c.grid_size) : d.x;
}

json beta_summary(const kmp::PosteriorDraws& draws, double level) {
  json out = json::array();
  for (int j = 0; j < draws.q(); ++j) {
    std::vector<double> v;
    for (const auto& d : draws.draws) v.push_back(d.beta(j));
    double mean = 0.0, sq = 0.0;
    for (double b : v) mean += b;
    mean /= static_cast<double>(v.size());
    for (double b : v) sq += (b - mean) * (b - mean);
    out.push_back({{"index", j + 1},
                   {"mean", mean},
                   {"sd", std::sqrt(sq / std::max<double>(1.0, static_cast<double>(v.size()) - 1.0))},
                   {"lo", kmp::quantile(v, 0.5 - 0.5 * level)},
                   {"hi", kmp::quantile(v, 0.5 + 0.5 * level)}});
  }
  return out;
}

void emit_chain(Run& run, const kmp::PosteriorDraws& draws, const kmp::Dataset& d, const RunConfig& c,
                json summary) {
  run.write("chain.csv", kmp::chain_csv(draws));
  run.write("chain_meta.json", json(kmp::chain_meta(draws)));
  const Eigen::MatrixXd grid = summary_grid(d, c);
  const Eigen::MatrixXd curves = kmp::draw_curves(draws, grid);
  const auto band = kmp::pointwise_band(curves, grid, c.level);
  run.write("summary.csv", kmp::summary_csv(band));
  summary["K"] = draws.K;
  summary["draws"] = draws.size();
  summary["chain_seconds"] = draws.seconds;
  summary["acceptance"] = kmp::acceptance_json(draws.acceptance);
  summary["pointwise"] = kmp::summary_json(band);
  if (curves.rows() >= 2) summary["l2set"] = kmp::summary_json(kmp::l2_credible_set(curves, grid, c.level));
  summary["dic"] = kmp::dic(draws, d).dic;
  if (draws.q() > 0) summary["beta"] = beta_summary(draws, c.level);
  run.write("summary.json", summary);
}

int cmd_fit(const Args& a, RunConfig c, bool plm) {
  c.mcmc.seed = need_seed(a);
  if (a.K) c.K = a.K;
  if (!c.K) throw kmp::ConfigError(a.command + ": K missing (use --K, config \"K\", or select-k)");
  Run run(a);
  json extra = json::object();
  kmp::Dataset d;
  std::optional<kmp::WageData> wage;
  if (plm && a.wage) {
    if (a.data.empty()) throw kmp::ConfigError("fit-plm: --data is required");
    wage = kmp::wage_preprocess(kmp::read_table(fs::path(a.data)), *a.seed);
    for (const auto& w : wage->warnings) std::cerr << "warning: " << w << "\n";
    extra["warnings"] = wage->warnings;
    extra["train_rows"] = wage->train_rows;
    d = wage->train;
  } else {
    d = need_data(a, c, plm);
  }
  kmp::PlmOptions o;
  o.fix_sigma_at_one = c.fix_sigma_at_one;
  const kmp::PosteriorDraws draws =
      plm ? kmp::run_plm_chain(c.mcmc, c.prior, *c.K, d, o) : kmp::run_chain(c.mcmc, c.prior, *c.K, d);
  json summary = json::object();
  if (wage) {
    const kmp::Prediction p = kmp::predict(draws, wage->test.x, c.level, wage->test.z);
    summary["test_mse"] = (p.mean - wage->test.y).squaredNorm() / static_cast<double>(wage->test.n());
    summary["test_rows"] = wage->test.n();
  }
  emit_chain(run, draws, d, c, summary);
  run.finish(config_json(c), extra);
  return 0;
}

int cmd_select_k(const Args& a, RunConfig c) {
  c.mcmc.seed = need_seed(a);
  const int lo = a.k_min > 0 ? a.k_min : c.prior.k_min;
  const int hi = a.k_max > 0 ? a.k_max : c.prior.k_max;
  Run run(a);
  const kmp::Dataset d = need_data(a, c, c.schema_given && !c.schema.z.empty());
  kmp::PlmOptions o;
  o.fix_sigma_at_one = c.fix_sigma_at_one;
  const kmp::SelectionResult sel = kmp::select_K(d, c.prior, c.mcmc, lo, hi, d.has_z(), o, a.threads);
  run.write("dic.csv", kmp::dic_csv(sel.report));
  run.write("dic.json", kmp::dic_json(sel.report));
  emit_chain(run, sel.best, d, c, {{"selected_K", sel.report.selected_K}});
  run.finish(config_json(c), {{"k_min", lo}, {"k_max", hi}, {"chain_seeds", "seed + K"}});
  return 0;
}

int cmd_fit_fixed(const Args& a, RunConfig c) {
  Run run(a);
  const kmp::Dataset d = need_data(a, c, false);
  kmp::FixedDesignModel model = c.fixed;
  model.p = d.p();
  if (a.K) model.K = *a.K;
  else if (!c.fixed_K_given) model.K = kmp::choose_Kn(d.n(), c.alpha, d.p());
  const kmp::ConjugatePosterior post = kmp::conjugate_fit(d, model);
  const Eigen::MatrixXd grid = summary_grid(d, c);
  kmp::CredibleSummary s;
  s.grid = grid;
  s.level = c.level;
  s.mean = post.mean_curve(grid);
  post.pointwise_band(grid, c.level, s.lower, s.upper);
  run.write("summary.csv", kmp::summary_csv(s));
  run.write("summary.json", json{{"K", model.K},
                                 {"coefficients", kmp::vec_json(post.mean)},
                                 {"sigma2_mean", post.sigma2_mean()},
                                 {"ig_shape", post.shape},
                                 {"ig_scale", post.scale},
                                 {"pointwise", kmp::summary_json(s)}});
  c.fixed = model;
  run.finish(config_json(c));
  return 0;
}

int cmd_sieve(const Args& a, RunConfig c) {
  kmp::Rng rng(need_seed(a));
  if (a.K) c.sieve.K = *a.K;
  Run run(a);
  const kmp::Dataset d = need_data(a, c, false);
  const kmp::SieveResult r = kmp::fit_sieve_mle(d, c.sieve, rng);
  const Eigen::MatrixXd grid = summary_grid(d, c);
  kmp::CredibleSummary s;
  s.grid = grid;
  s.level = c.level;
  s.mean = kmp::eval_f(r.params, grid);
  s.lower = s.upper = s.mean;
  run.write("summary.csv", kmp::summary_csv(s));
  json centers = json::array();
  for (Eigen::Index b = 0; b < r.params.centers.rows(); ++b) {
    json row = json::array();
    for (Eigen::Index j = 0; j < r.params.centers.cols(); ++j) row.push_back(r.params.centers(b, j));
    centers.push_back(row);
  }
  run.write("summary.json", json{{"K", r.params.K},
                                 {"h", r.params.h},
                                 {"sigma", r.params.sigma},
                                 {"objective", r.objective},
                                 {"iterations", r.iterations},
                                 {"hit_iteration_cap", r.hit_iteration_cap},
                                 {"trace", r.trace},
                                 {"centers", centers},
                                 {"xi", kmp::vec_json(r.params.xi)},
                                 {"fit", kmp::summary_json(s)}});
  run.finish(config_json(c));
  return 0;
}

kmp::ScenarioSpec scenario_of(const Args& a, const RunConfig& c) {
  json j = c.scenario;
  j["seed"] = need_seed(a);
  if (a.threads) j["threads"] = a.threads;
  if (a.K) j["K"] = *a.K;
  return j.get<kmp::ScenarioSpec>();
}

int cmd_coverage(const Args& a, RunConfig c) {
  const kmp::ScenarioSpec spec = scenario_of(a, c);
  Run run(a);
  const kmp::CoverageReport rep = kmp::run_coverage(spec);
  run.write("coverage.csv", kmp::coverage_csv(rep));
  run.write("coverage.json", kmp::coverage_json(rep));
  run.finish(json(spec), {{"replicate_seeds", "seed + r"}});
  return 0;
}

int cmd_benchmark(const Args& a, RunConfig c) {
  const kmp::ScenarioSpec spec = scenario_of(a, c);
  Run run(a);
  const kmp::BenchmarkReport rep = kmp::run_benchmark(spec);
  run.write("benchmark.json", kmp::benchmark_json(rep));
  run.finish(json(spec));
  return 0;
}

int cmd_predict(const Args& a, RunConfig c) {
  if (a.chain.empty()) throw kmp::ConfigError("predict: --chain is required");
  const fs::path dir(a.chain);
  const auto meta = kmp::read_json(dir / "chain_meta.json").get<kmp::ChainMeta>();
  const kmp::PosteriorDraws draws = kmp::chain_from_table(kmp::read_table(dir / "chain.csv"), meta);
  Run run(a);
  if (a.data.empty()) throw kmp::ConfigError("predict: --data is required");
  kmp::CsvSchema s = c.schema;
  const kmp::Table t = kmp::read_table(fs::path(a.data));
  if (!c.schema_given && meta.q > 0) {
    s.z.clear();
    for (const auto& h : t.header)
      if (h != "x" && h != "y") s.z.push_back(h);
  }
  // Prediction inputs need no response column.
  kmp::Table tt = t;
  if (tt.column(s.y) < 0) {
    tt.header.push_back(s.y);
    for (auto& r : tt.rows) r.push_back("0");
  }
  const kmp::Dataset d = kmp::dataset_from_table(tt, s);
  if (d.q() != meta.q) throw kmp::ConfigError("predict: chain has " + std::to_string(meta.q) + " covariates, data " +
                                              std::to_string(d.q()));
  const kmp::Prediction p = kmp::predict(draws, d.x, c.level, d.z);
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    std::vector<std::string> r;
    for (int j = 0; j < d.p(); ++j) r.push_back(kmp::format_double(d.x(i, j)));
    r.insert(r.end(), {kmp::format_double(p.mean(i)), kmp::format_double(p.lower(i)), kmp::format_double(p.upper(i))});
    rows.push_back(std::move(r));
  }
  std::vector<std::string> header;
  for (int j = 0; j < d.p(); ++j) header.push_back(s.x[j]);
  header.insert(header.end(), {"mean", "lo", "hi"});
  run.write("predictions.csv", kmp::write_csv_string(header, rows));
  run.finish(config_json(c), {{"chain", a.chain}});
  return 0;
}

void error_json(const std::string& out, const std::string& kind, const std::string& message) {
  const json e{{"error", {{"type", kind}, {"message", message}}}};
  std::cerr << e.dump() << "\n";
  if (!out.empty()) {
    try {
      kmp::atomic_write(fs::path(out) / "error.json", e.dump(2) + "\n");
    } catch (...) {
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  Args a;
  for (int i = 0; i < argc; ++i) a.argv.push_back(argv[i]);

  CLI::App app{"Kernel mixture of polynomials regression"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kmp::kVersion);

  auto common = [&](CLI::App* s, bool stochastic) {
    s->add_option("--data", a.data, "input CSV")->envname("KMP_DATA");
    s->add_option("--config", a.config, "JSON configuration")->envname("KMP_CONFIG");
    s->add_option("--out", a.out, "output directory")->envname("KMP_OUT");
    s->add_option("--threads", a.threads, "worker threads (0: all cores)")->envname("KMP_THREADS");
    auto* seed = s->add_option("--seed", a.seed, "random seed")->envname("KMP_SEED");
    if (stochastic) seed->required();
  };
  struct Sub {
    const char* name;
    const char* help;
    bool stochastic;
  };
  const Sub subs[] = {{"fit", "MCMC fit of the nonparametric model at fixed K", true},
                      {"fit-plm", "MCMC fit of the partial linear model", true},
                      {"fit-fixed", "closed-form fixed-design posterior", false},
                      {"sieve-mle", "sieve maximum likelihood", true},
                      {"select-k", "DIC over a K range", true},
                      {"coverage", "replicated coverage study", true},
                      {"benchmark", "MSE and wall-clock against the GP baselines", true},
                      {"predict", "posterior predictive intervals from a saved chain", false}};
  for (const auto& s : subs) {
    CLI::App* sc = app.add_subcommand(s.name, s.help);
    common(sc, s.stochastic);
    const std::string n = s.name;
    if (n != "coverage" && n != "benchmark" && n != "predict" && n != "select-k")
      sc->add_option("--K", a.K, "number of partition blocks per axis")->envname("KMP_K");
    if (n == "coverage" || n == "benchmark") sc->add_option("--K", a.K, "fixed K (default: DIC)");
    if (n == "select-k") {
      sc->add_option("--k-min", a.k_min, "smallest K")->envname("KMP_K_MIN");
      sc->add_option("--k-max", a.k_max, "largest K")->envname("KMP_K_MAX");
    }
    if (n == "fit-plm") sc->add_flag("--wage", a.wage, "preprocess --data as the wage table and hold out a test split");
    if (n == "predict") sc->add_option("--chain", a.chain, "directory holding chain.csv and chain_meta.json")->required();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_json("", "usage", e.what());
    return 2;
  }
  a.command = app.get_subcommands().front()->get_name();
  if (a.threads == 0) a.threads = kmp::default_threads();

  try {
    const RunConfig c = load_config(a.config);
    if (a.command == "fit") return cmd_fit(a, c, false);
    if (a.command == "fit-plm") return cmd_fit(a, c, true);
    if (a.command == "fit-fixed") return cmd_fit_fixed(a, c);
    if (a.command == "sieve-mle") return cmd_sieve(a, c);
    if (a.command == "select-k") return cmd_select_k(a, c);
    if (a.command == "coverage") return cmd_coverage(a, c);
    if (a.command == "benchmark") return cmd_benchmark(a, c);
    if (a.command == "predict") return cmd_predict(a, c);
  } catch (const kmp::ParseError& e) {
    error_json(a.out, "parse", e.what());
    return 4;
  } catch (const std::invalid_argument& e) {
    error_json(a.out, "config", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    error_json(a.out, "config", e.what());
    return 3;
  } catch (const std::exception& e) {
    error_json(a.out, "runtime", e.what());
    return 1;
  }
  return 1;
}
