#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <unistd.h>
#include <vector>

#include "kmp/baselines.hpp"
#include "kmp/dataset.hpp"
#include "kmp/fixed_design.hpp"
#include "kmp/posterior.hpp"
#include "kmp/priors.hpp"
#include "kmp/random.hpp"
#include "kmp/sampler.hpp"
#include "kmp/sieve_mle.hpp"

namespace kmp {

inline constexpr const char* kVersion = "0.1.0";

class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- number formatting ------------------------------------------------------

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// ---- CSV ------------------------------------------------------------------

/// Header plus string cells.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return static_cast<int>(j);
    return -1;
  }
  int require(std::string_view name) const {
    const int j = column(name);
    if (j < 0) throw ParseError("missing column '" + std::string(name) + "'");
    return j;
  }
};

namespace detail {

inline std::vector<std::string> split_record(std::istream& in, bool& ok, long& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false, any = false;
  ok = false;
  for (int c; (c = in.get()) != EOF;) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          quoted = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(static_cast<char>(c));
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++line;
      ok = true;
      break;
    } else if (c != '\r') {
      field.push_back(static_cast<char>(c));
    }
  }
  if (quoted) throw ParseError("unterminated quoted field near line " + std::to_string(line));
  if (any) {
    fields.push_back(std::move(field));
    ok = true;
  }
  return fields;
}

inline std::string quote_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace detail

inline Table read_table(std::istream& in) {
  Table t;
  bool ok = false;
  long line = 0;
  t.header = detail::split_record(in, ok, line);
  if (!ok || t.header.empty() || (t.header.size() == 1 && t.header[0].empty()))
    throw ParseError("csv: missing header row");
  if (t.header.front().rfind("\xEF\xBB\xBF", 0) == 0) t.header.front().erase(0, 3);
  while (true) {
    const long at = line + 1;
    auto rec = detail::split_record(in, ok, line);
    if (!ok) break;
    if (rec.size() == 1 && rec[0].empty()) continue;  // blank line
    if (rec.size() != t.header.size())
      throw ParseError("csv: line " + std::to_string(at) + " has " + std::to_string(rec.size()) +
                       " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(rec));
  }
  return t;
}

inline Table read_table(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  return read_table(in);
}

/// Which CSV columns feed x, z and y.
struct CsvSchema {
  std::vector<std::string> x{"x"};
  std::vector<std::string> z;
  std::string y = "y";
};

inline void to_json(nlohmann::json& j, const CsvSchema& s) { j = {{"x", s.x}, {"z", s.z}, {"y", s.y}}; }

inline void from_json(const nlohmann::json& j, CsvSchema& s) {
  for (const auto& [key, _] : j.items())
    if (key != "x" && key != "z" && key != "y") throw ConfigError("unknown schema key: " + key);
  detail::read_opt(j, "x", s.x);
  detail::read_opt(j, "z", s.z);
  detail::read_opt(j, "y", s.y);
}

inline double table_number(const Table& t, std::size_t row, int col) {
  const auto v = parse_double(t.rows[row][col]);
  if (!v)
    throw ParseError("csv: row " + std::to_string(row + 1) + ", column '" + t.header[col] +
                     "': cannot parse '" + t.rows[row][col] + "' as a number");
  return *v;
}

inline Dataset dataset_from_table(const Table& t, const CsvSchema& schema, bool check_domain = true) {
  if (schema.x.empty()) throw ConfigError("schema: at least one x column required");
  std::vector<int> xc, zc;
  for (const auto& c : schema.x) xc.push_back(t.require(c));
  for (const auto& c : schema.z) zc.push_back(t.require(c));
  const int yc = t.require(schema.y);
  const auto n = static_cast<Eigen::Index>(t.rows.size());
  Dataset d;
  d.x.resize(n, static_cast<Eigen::Index>(xc.size()));
  d.z.resize(n, static_cast<Eigen::Index>(zc.size()));
  d.y.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto r = static_cast<std::size_t>(i);
    for (std::size_t j = 0; j < xc.size(); ++j) {
      const double v = table_number(t, r, xc[j]);
      if (check_domain && !(v >= 0.0 && v <= 1.0))
        throw ParseError("csv: row " + std::to_string(r + 1) + ", column '" + schema.x[j] + "': value " +
                         t.rows[r][xc[j]] + " outside (0,1]");
      d.x(i, static_cast<Eigen::Index>(j)) = v;
    }
    for (std::size_t j = 0; j < zc.size(); ++j) d.z(i, static_cast<Eigen::Index>(j)) = table_number(t, r, zc[j]);
    d.y(i) = table_number(t, r, yc);
  }
  d.x_names = schema.x;
  d.z_names = schema.z;
  d.y_name = schema.y;
  return d;
}

inline Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema = {}) {
  Dataset d = dataset_from_table(read_table(path), schema);
  d.provenance = "csv:" + path.string();
  return d;
}

/// Writes `contents` next to `path` and renames it into place.
inline void atomic_write(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string write_csv_string(const std::vector<std::string>& header,
                                    const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t j = 0; j < cells.size(); ++j) {
      if (j) out.push_back(',');
      out += detail::quote_field(cells[j]);
    }
    out.push_back('\n');
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out;
}

inline void save_csv(const std::filesystem::path& path, const Dataset& d) {
  d.validate();
  std::vector<std::string> header;
  for (int j = 0; j < d.p(); ++j) header.push_back(j < static_cast<int>(d.x_names.size()) ? d.x_names[j] : d.p() == 1 ? "x" : "x" + std::to_string(j + 1));
  for (int j = 0; j < d.q(); ++j) header.push_back(j < static_cast<int>(d.z_names.size()) ? d.z_names[j] : "z" + std::to_string(j + 1));
  header.push_back(d.y_name);
  std::vector<std::vector<std::string>> rows(static_cast<std::size_t>(d.n()));
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    auto& r = rows[static_cast<std::size_t>(i)];
    for (int j = 0; j < d.p(); ++j) r.push_back(format_double(d.x(i, j)));
    for (int j = 0; j < d.q(); ++j) r.push_back(format_double(d.z(i, j)));
    r.push_back(format_double(d.y(i)));
  }
  atomic_write(path, write_csv_string(header, rows));
}

inline CsvSchema schema_of(const Dataset& d) {
  CsvSchema s;
  s.x.clear();
  for (int j = 0; j < d.p(); ++j) s.x.push_back(j < static_cast<int>(d.x_names.size()) ? d.x_names[j] : d.p() == 1 ? "x" : "x" + std::to_string(j + 1));
  for (int j = 0; j < d.q(); ++j) s.z.push_back(j < static_cast<int>(d.z_names.size()) ? d.z_names[j] : "z" + std::to_string(j + 1));
  s.y = d.y_name;
  return s;
}

// ---- wage data ---------------------------------------------------------------

struct WageData {
  Dataset full;
  Dataset train;
  Dataset test;
  std::vector<Eigen::Index> train_rows;
  std::vector<std::string> warnings;
  double exper_min = 0.0;
  double exper_max = 0.0;
};

inline double pm_one(const Table& t, std::size_t row, int col) {
  std::string s = t.rows[row][col];
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  s.erase(std::remove_if(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); }), s.end());
  if (s == "1" || s == "yes" || s == "true" || s == "y") return 1.0;
  if (s == "0" || s == "-1" || s == "no" || s == "false" || s == "n") return -1.0;
  throw ParseError("wage: row " + std::to_string(row + 1) + ", column '" + t.header[col] +
                   "': cannot read '" + t.rows[row][col] + "' as an indicator");
}

/// z = (female, married, educ, tenure) with indicators coded +1/-1 and educ,
/// tenure centred on the full sample; x = exper mapped affinely into
/// [eps, 1 - eps]; y = lwage. Seeded permutation split into train/test
/// (300/226 for the full 526 rows, proportional otherwise).
inline WageData wage_preprocess(const Table& raw, std::uint64_t seed, double eps = 1e-6) {
  const int c_y = raw.require("lwage"), c_f = raw.require("female"), c_m = raw.require("married"),
            c_e = raw.require("educ"), c_t = raw.require("tenure"), c_x = raw.require("exper");
  const std::size_t n = raw.rows.size();
  if (n < 2) throw ParseError("wage: need at least 2 rows");
  WageData w;
  if (n < 526) w.warnings.push_back("wage: only " + std::to_string(n) + " rows (full data has 526)");
  Dataset& d = w.full;
  d.x.resize(static_cast<Eigen::Index>(n), 1);
  d.z.resize(static_cast<Eigen::Index>(n), 4);
  d.y.resize(static_cast<Eigen::Index>(n));
  Eigen::VectorXd exper(static_cast<Eigen::Index>(n));
  for (std::size_t r = 0; r < n; ++r) {
    const auto i = static_cast<Eigen::Index>(r);
    d.y(i) = table_number(raw, r, c_y);
    d.z(i, 0) = pm_one(raw, r, c_f);
    d.z(i, 1) = pm_one(raw, r, c_m);
    d.z(i, 2) = table_number(raw, r, c_e);
    d.z(i, 3) = table_number(raw, r, c_t);
    exper(i) = table_number(raw, r, c_x);
  }
  for (int j = 2; j < 4; ++j) d.z.col(j).array() -= d.z.col(j).mean();
  w.exper_min = exper.minCoeff();
  w.exper_max = exper.maxCoeff();
  const double span = w.exper_max - w.exper_min;
  for (Eigen::Index i = 0; i < d.n(); ++i)
    d.x(i, 0) = span > 0.0 ? eps + (1.0 - 2.0 * eps) * (exper(i) - w.exper_min) / span : 0.5;
  d.x_names = {"exper"};
  d.z_names = {"female", "married", "educ", "tenure"};
  d.y_name = "lwage";
  d.provenance = "wage";

  const std::size_t n_train =
      n >= 526 ? 300 : std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(n * 300.0 / 526.0)), 1, n - 1);
  std::vector<Eigen::Index> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  w.train_rows.assign(perm.begin(), perm.begin() + static_cast<long>(n_train));
  std::sort(w.train_rows.begin(), w.train_rows.end());
  std::vector<Eigen::Index> test_rows(perm.begin() + static_cast<long>(n_train), perm.end());
  std::sort(test_rows.begin(), test_rows.end());
  w.train = d.subset(w.train_rows);
  w.test = d.subset(test_rows);
  return w;
}

// ---- configuration JSON --------------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string("unknown ") + what + " key: " + key);
  }
}

template <typename T>
void read_optional(const nlohmann::json& j, const char* key, std::optional<T>& out) {
  if (!j.contains(key)) return;
  if (j.at(key).is_null()) {
    out.reset();
    return;
  }
  T v{};
  read_opt(j, key, v);
  out = v;
}

template <typename T>
nlohmann::json optional_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const McmcConfig& c) {
  j = {{"burnin", c.burnin},
       {"samples", c.samples},
       {"thin", c.thin},
       {"seed", c.seed},
       {"init_least_squares", c.init_least_squares},
       {"fixed_kh", detail::optional_json(c.fixed_kh)},
       {"fix_centers", c.fix_centers},
       {"fixed_sigma", detail::optional_json(c.fixed_sigma)}};
}

inline void from_json(const nlohmann::json& j, McmcConfig& c) {
  detail::reject_unknown(j, {"burnin", "samples", "thin", "seed", "init_least_squares", "fixed_kh",
                             "fix_centers", "fixed_sigma"},
                         "mcmc");
  detail::read_opt(j, "burnin", c.burnin);
  detail::read_opt(j, "samples", c.samples);
  detail::read_opt(j, "thin", c.thin);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "init_least_squares", c.init_least_squares);
  detail::read_optional(j, "fixed_kh", c.fixed_kh);
  detail::read_opt(j, "fix_centers", c.fix_centers);
  detail::read_optional(j, "fixed_sigma", c.fixed_sigma);
  c.validate();
}

inline void to_json(nlohmann::json& j, const GpConfig& c) {
  j = {{"covariance", std::string(to_string(c.covariance))},
       {"a_psi", c.a_psi},
       {"b_psi", c.b_psi},
       {"sigma", c.sigma},
       {"estimate_sigma", c.estimate_sigma},
       {"burnin", c.burnin},
       {"samples", c.samples},
       {"seed", c.seed},
       {"init_psi", c.init_psi},
       {"step_log_psi", c.step_log_psi},
       {"step_log_sigma", c.step_log_sigma},
       {"jitter", c.jitter},
       {"max_jitter", c.max_jitter}};
}

inline void from_json(const nlohmann::json& j, GpConfig& c) {
  detail::reject_unknown(j, {"covariance", "a_psi", "b_psi", "sigma", "estimate_sigma", "burnin", "samples",
                             "seed", "init_psi", "step_log_psi", "step_log_sigma", "jitter", "max_jitter"},
                         "gp");
  if (j.contains("covariance")) c.covariance = gp_covariance_from_string(j.at("covariance").get<std::string>());
  detail::read_opt(j, "a_psi", c.a_psi);
  detail::read_opt(j, "b_psi", c.b_psi);
  detail::read_opt(j, "sigma", c.sigma);
  detail::read_opt(j, "estimate_sigma", c.estimate_sigma);
  detail::read_opt(j, "burnin", c.burnin);
  detail::read_opt(j, "samples", c.samples);
  detail::read_opt(j, "seed", c.seed);
  detail::read_opt(j, "init_psi", c.init_psi);
  detail::read_opt(j, "step_log_psi", c.step_log_psi);
  detail::read_opt(j, "step_log_sigma", c.step_log_sigma);
  detail::read_opt(j, "jitter", c.jitter);
  detail::read_opt(j, "max_jitter", c.max_jitter);
  c.validate();
}

inline void to_json(nlohmann::json& j, const LocalFitConfig& c) {
  j = {{"degree", c.degree},
       {"kernel", std::string(to_string(c.kernel))},
       {"bandwidth", detail::optional_json(c.bandwidth)},
       {"cv_grid", c.cv_grid},
       {"cv_lo", c.cv_lo},
       {"cv_hi", c.cv_hi}};
}

inline void from_json(const nlohmann::json& j, LocalFitConfig& c) {
  detail::reject_unknown(j, {"degree", "kernel", "bandwidth", "cv_grid", "cv_lo", "cv_hi"}, "local fit");
  detail::read_opt(j, "degree", c.degree);
  if (j.contains("kernel")) c.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
  detail::read_optional(j, "bandwidth", c.bandwidth);
  detail::read_opt(j, "cv_grid", c.cv_grid);
  detail::read_opt(j, "cv_lo", c.cv_lo);
  detail::read_opt(j, "cv_hi", c.cv_hi);
  c.validate();
}

inline void to_json(nlohmann::json& j, const SieveConfig& c) {
  j = {{"K", c.K},
       {"alpha", c.alpha},
       {"B", detail::json_number(c.B)},
       {"m", c.m},
       {"h_lo", c.h_lo},
       {"h_hi", c.h_hi},
       {"kernel", std::string(to_string(c.kernel))},
       {"multistart", c.multistart},
       {"tol", c.tol},
       {"max_iter", c.max_iter},
       {"line_grid", c.line_grid},
       {"golden_steps", c.golden_steps},
       {"sigma0", detail::optional_json(c.sigma0)}};
}

inline void from_json(const nlohmann::json& j, SieveConfig& c) {
  detail::reject_unknown(j, {"K", "alpha", "B", "m", "h_lo", "h_hi", "kernel", "multistart", "tol", "max_iter",
                             "line_grid", "golden_steps", "sigma0"},
                         "sieve");
  detail::read_opt(j, "K", c.K);
  detail::read_opt(j, "alpha", c.alpha);
  detail::read_opt(j, "B", c.B);
  detail::read_opt(j, "m", c.m);
  detail::read_opt(j, "h_lo", c.h_lo);
  detail::read_opt(j, "h_hi", c.h_hi);
  if (j.contains("kernel")) c.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
  detail::read_opt(j, "multistart", c.multistart);
  detail::read_opt(j, "tol", c.tol);
  detail::read_opt(j, "max_iter", c.max_iter);
  detail::read_opt(j, "line_grid", c.line_grid);
  detail::read_opt(j, "golden_steps", c.golden_steps);
  detail::read_optional(j, "sigma0", c.sigma0);
  c.validate();
}

inline void to_json(nlohmann::json& j, const FixedDesignModel& c) {
  j = {{"K", c.K},      {"p", c.p}, {"m", c.m}, {"a_sigma", c.a_sigma}, {"b_sigma", c.b_sigma},
       {"kernel", std::string(to_string(c.kernel))}};
}

inline void from_json(const nlohmann::json& j, FixedDesignModel& c) {
  detail::reject_unknown(j, {"K", "p", "m", "a_sigma", "b_sigma", "kernel"}, "fixed design");
  detail::read_opt(j, "K", c.K);
  detail::read_opt(j, "p", c.p);
  detail::read_opt(j, "m", c.m);
  detail::read_opt(j, "a_sigma", c.a_sigma);
  detail::read_opt(j, "b_sigma", c.b_sigma);
  if (j.contains("kernel")) c.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
  c.validate();
}

// ---- chain persistence ------------------------------------------------------------

/// Static shape of the draws in a chain file.
struct ChainMeta {
  int K = 1;
  int p = 1;
  int m = 0;
  int q = 0;
  KernelFamily kernel = KernelFamily::bump;
};

inline void to_json(nlohmann::json& j, const ChainMeta& c) {
  j = {{"K", c.K}, {"p", c.p}, {"m", c.m}, {"q", c.q}, {"kernel", std::string(to_string(c.kernel))}};
}

inline void from_json(const nlohmann::json& j, ChainMeta& c) {
  detail::reject_unknown(j, {"K", "p", "m", "q", "kernel"}, "chain meta");
  detail::read_opt(j, "K", c.K);
  detail::read_opt(j, "p", c.p);
  detail::read_opt(j, "m", c.m);
  detail::read_opt(j, "q", c.q);
  if (j.contains("kernel")) c.kernel = kernel_family_from_string(j.at("kernel").get<std::string>());
}

inline ChainMeta chain_meta(const PosteriorDraws& d) {
  if (d.empty()) throw std::invalid_argument("chain meta of empty chain");
  const KmpParams& q = d.draws.front().params;
  return ChainMeta{q.K, q.p, q.m, d.q(), q.kernel};
}

inline std::vector<std::string> chain_header(const ChainMeta& m) {
  std::vector<std::string> h{"draw"};
  for (int j = 0; j < m.q; ++j) h.push_back("beta_" + std::to_string(j + 1));
  h.insert(h.end(), {"K", "h", "sigma", "loglik", "logpost"});
  const int blocks = PartitionGrid(m.K, m.p).num_blocks();
  const int nm = static_cast<int>(binomial(m.p + m.m, m.m));
  for (int b = 0; b < blocks; ++b)
    for (int j = 0; j < m.p; ++j) h.push_back("mu_" + std::to_string(b + 1) + "_" + std::to_string(j + 1));
  for (int b = 0; b < blocks; ++b)
    for (int s = 0; s < nm; ++s) h.push_back("xi_" + std::to_string(b + 1) + "_" + std::to_string(s));
  return h;
}

/// One row per draw in shortest round-trip decimal form; the layout is
/// described by the accompanying ChainMeta JSON.
inline std::string chain_csv(const PosteriorDraws& d) {
  const ChainMeta meta = chain_meta(d);
  std::vector<std::vector<std::string>> rows;
  rows.reserve(d.size());
  for (std::size_t t = 0; t < d.size(); ++t) {
    const Draw& dr = d.draws[t];
    const KmpParams& q = dr.params;
    std::vector<std::string> r{std::to_string(t + 1)};
    for (Eigen::Index j = 0; j < dr.beta.size(); ++j) r.push_back(format_double(dr.beta(j)));
    r.insert(r.end(), {std::to_string(q.K), format_double(q.h), format_double(q.sigma), format_double(dr.loglik),
                       format_double(dr.logpost)});
    for (int b = 0; b < q.num_blocks(); ++b)
      for (int j = 0; j < q.p; ++j) r.push_back(format_double(q.centers(b, j)));
    for (Eigen::Index j = 0; j < q.xi.size(); ++j) r.push_back(format_double(q.xi(j)));
    rows.push_back(std::move(r));
  }
  return write_csv_string(chain_header(meta), rows);
}

inline PosteriorDraws chain_from_table(const Table& t, const ChainMeta& meta) {
  if (t.header != chain_header(meta)) throw ParseError("chain: header does not match the chain metadata");
  PosteriorDraws out;
  out.K = meta.K;
  const KmpParams base = KmpParams::centered(meta.K, meta.p, meta.m, 2.0, meta.kernel);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    int c = 1;
    Draw d;
    d.beta.resize(meta.q);
    for (int j = 0; j < meta.q; ++j) d.beta(j) = table_number(t, r, c++);
    if (table_number(t, r, c++) != meta.K) throw ParseError("chain: row " + std::to_string(r + 1) + " has a different K");
    d.params = base;
    d.params.h = table_number(t, r, c++);
    d.params.sigma = table_number(t, r, c++);
    d.loglik = table_number(t, r, c++);
    d.logpost = table_number(t, r, c++);
    for (int b = 0; b < base.num_blocks(); ++b)
      for (int j = 0; j < meta.p; ++j) d.params.centers(b, j) = table_number(t, r, c++);
    for (Eigen::Index j = 0; j < base.xi.size(); ++j) d.params.xi(j) = table_number(t, r, c++);
    d.params.validate();
    out.draws.push_back(std::move(d));
  }
  return out;
}

// ---- summaries --------------------------------------------------------------

inline std::string summary_csv(const CredibleSummary& s) {
  std::vector<std::string> header;
  for (Eigen::Index j = 0; j < s.grid.cols(); ++j) header.push_back(s.grid.cols() == 1 ? "x" : "x" + std::to_string(j + 1));
  header.insert(header.end(), {"mean", "lo", "hi"});
  std::vector<std::vector<std::string>> rows;
  for (Eigen::Index g = 0; g < s.grid.rows(); ++g) {
    std::vector<std::string> r;
    for (Eigen::Index j = 0; j < s.grid.cols(); ++j) r.push_back(format_double(s.grid(g, j)));
    r.push_back(format_double(s.mean(g)));
    r.push_back(format_double(s.lower(g)));
    r.push_back(format_double(s.upper(g)));
    rows.push_back(std::move(r));
  }
  return write_csv_string(header, rows);
}

inline nlohmann::json vec_json(const Eigen::VectorXd& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(detail::json_number(v(i)));
  return a;
}

inline nlohmann::json summary_json(const CredibleSummary& s) {
  nlohmann::json j{{"kind", to_string(s.kind)}, {"level", s.level}, {"mean", vec_json(s.mean)},
                   {"lo", vec_json(s.lower)},   {"hi", vec_json(s.upper)}};
  if (s.kind == BandKind::l2set) {
    j["radius"] = s.radius;
    j["retained"] = s.retained;
  }
  return j;
}

inline nlohmann::json dic_json(const DicReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& d : r.rows) {
    nlohmann::json row{{"K", d.K}, {"failed", d.failed}};
    if (d.failed) {
      row["error"] = d.error;
    } else {
      row["dic"] = d.dic;
      row["mean_deviance"] = d.mean_deviance;
      row["p_dic"] = d.p_dic;
      row["variance_fallback"] = d.variance_fallback;
    }
    rows.push_back(std::move(row));
  }
  return {{"selected_K", r.selected_K}, {"variant", r.variant}, {"rows", rows}};
}

inline std::string dic_csv(const DicReport& r) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& d : r.rows)
    rows.push_back({std::to_string(d.K), d.failed ? "nan" : format_double(d.dic),
                    d.failed ? "nan" : format_double(d.mean_deviance), d.failed ? "nan" : format_double(d.p_dic),
                    d.variance_fallback ? "1" : "0", d.failed ? "1" : "0"});
  return write_csv_string({"K", "dic", "mean_deviance", "p_dic", "variance_fallback", "failed"}, rows);
}

inline nlohmann::json acceptance_json(const AcceptanceRecord& a) {
  return {{"mu_proposed", a.mu_proposed}, {"mu_accepted", a.mu_accepted}, {"h_proposed", a.h_proposed},
          {"h_accepted", a.h_accepted},   {"xi_prior_fallbacks", a.xi_prior_fallbacks}};
}

/// Build and library versions recorded in run manifests.
inline nlohmann::json version_json() {
  return {{"kmp", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  atomic_write(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path.string() + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

}  // namespace kmp
