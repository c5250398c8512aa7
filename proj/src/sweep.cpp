#include "dsmrf/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>
#include <tuple>

#include "dsmrf/checks.hpp"
#include "dsmrf/glm_free_energy.hpp"
#include "dsmrf/learning_curves.hpp"
#include "dsmrf/mc_simulator.hpp"
#include "dsmrf/parallel.hpp"
#include "json.hpp"

namespace dsmrf {

namespace fs = std::filesystem;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const char* to_string(SweepMode m) {
  switch (m) {
    case SweepMode::theory: return "theory";
    case SweepMode::simulate: return "simulate";
    case SweepMode::glm_baseline: return "glm-baseline";
    case SweepMode::sample_complexity: return "sample-complexity";
    case SweepMode::check: return "check";
  }
  return "?";
}

const char* to_string(Axis a) {
  switch (a) {
    case Axis::psi_p: return "psi_p";
    case Axis::psi_n: return "psi_n";
    case Axis::t: return "t";
    case Axis::psi_D: return "psi_D";
  }
  return "?";
}

static std::string where(const std::string& source, int line, const std::string& key) {
  std::ostringstream os;
  os << source;
  if (line > 0) os << ":" << line;
  if (!key.empty()) os << ": key '" << key << "'";
  return os.str();
}

ConfigError::ConfigError(const std::string& source, int line_, const std::string& key_, const std::string& msg)
    : std::runtime_error(where(source, line_, key_) + ": " + msg), line(line_), key(key_) {}

std::string format_double(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o += '"';
    o += c;
  }
  return o + "\"";
}

std::vector<double> make_grid(double lo, double hi, int count, bool log_spacing) {
  if (count < 1) throw std::invalid_argument("grid is empty");
  if (!(lo <= hi)) throw std::invalid_argument("grid minimum exceeds maximum");
  if (log_spacing && !(lo > 0.0)) throw std::invalid_argument("log grid needs a positive minimum");
  std::vector<double> g(count);
  for (int i = 0; i < count; ++i) {
    double f = count == 1 ? 0.0 : double(i) / double(count - 1);
    g[i] = log_spacing ? std::exp(std::log(lo) + f * (std::log(hi) - std::log(lo))) : lo + f * (hi - lo);
  }
  if (count > 1) {
    g.front() = lo;
    g.back() = hi;
  }
  return g;
}

// ---------------------------------------------------------------- parsing

namespace {

enum class Kind { text, number, numbers, integer, integers, boolean };

const std::map<std::string, Kind>& known_keys() {
  static const std::map<std::string, Kind> k = {
      {"mode", Kind::text},         {"rho", Kind::text},          {"sigma", Kind::text},
      {"lambda", Kind::number},     {"t", Kind::numbers},         {"psi_D", Kind::numbers},
      {"psi_n", Kind::numbers},     {"psi_p", Kind::numbers},     {"sweep", Kind::text},
      {"sweep_min", Kind::number},  {"sweep_max", Kind::number},  {"sweep_count", Kind::integer},
      {"sweep_spacing", Kind::text}, {"d", Kind::integer},        {"seeds", Kind::integers},
      {"n_z", Kind::integer},       {"n_test", Kind::integer},    {"n_mc_score", Kind::integer},
      {"mehler_order", Kind::integer}, {"score", Kind::boolean},  {"epsilon", Kind::number},
      {"quick", Kind::boolean},     {"output", Kind::text},
  };
  return k;
}

std::string trim(std::string_view s) {
  size_t a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
  return a == std::string_view::npos ? std::string() : std::string(s.substr(a, b - a + 1));
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  if (trim(v).empty()) return out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, ',')) out.push_back(trim(cur));
  if (!v.empty() && v.back() == ',') out.push_back("");
  return out;
}

struct Raw {
  std::string value;
  int line = 0;
};

class Parser {
 public:
  Parser(std::string source, std::map<std::string, Raw> raw) : src_(std::move(source)), raw_(std::move(raw)) {}

  bool has(const std::string& k) const { return raw_.count(k) != 0; }
  int line(const std::string& k) const { return has(k) ? raw_.at(k).line : 0; }
  [[noreturn]] void fail(const std::string& k, const std::string& msg) const { throw ConfigError(src_, line(k), k, msg); }

  std::string text(const std::string& k) const { return trim(raw_.at(k).value); }

  double number_of(const std::string& k, const std::string& s) const {
    double x;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(x))
      fail(k, "expected a number, got '" + s + "'");
    return x;
  }
  long long integer_of(const std::string& k, const std::string& s) const {
    long long x;
    auto r = std::from_chars(s.data(), s.data() + s.size(), x);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) fail(k, "expected an integer, got '" + s + "'");
    return x;
  }
  double number(const std::string& k) const { return number_of(k, text(k)); }
  long long integer(const std::string& k) const { return integer_of(k, text(k)); }
  std::vector<double> numbers(const std::string& k) const {
    std::vector<double> v;
    for (const auto& s : split_list(raw_.at(k).value)) {
      if (s.empty()) fail(k, "empty list item");
      v.push_back(number_of(k, s));
    }
    if (v.empty()) fail(k, "empty list");
    return v;
  }
  std::vector<long long> integers(const std::string& k) const {
    std::vector<long long> v;
    for (const auto& s : split_list(raw_.at(k).value)) {
      if (s.empty()) fail(k, "empty list item");
      v.push_back(integer_of(k, s));
    }
    if (v.empty()) fail(k, "empty list");
    return v;
  }
  bool boolean(const std::string& k) const {
    std::string s = text(k);
    if (s == "true" || s == "yes" || s == "1") return true;
    if (s == "false" || s == "no" || s == "0") return false;
    fail(k, "expected true or false, got '" + s + "'");
  }

 private:
  std::string src_;
  std::map<std::string, Raw> raw_;
};

void require_positive(const Parser& P, const std::string& k, const std::vector<double>& v) {
  for (double x : v)
    if (!(x > 0.0)) P.fail(k, "values must be positive");
}

}  // namespace

SweepConfig parse_config(std::istream& in, const std::string& source) {
  SweepConfig c;
  c.source = source;
  std::map<std::string, Raw> raw;
  std::string line;
  int ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    std::string s = trim(line);
    if (s.empty()) continue;
    auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError(source, ln, "", "expected 'key = value'");
    std::string key = trim(std::string_view(s).substr(0, eq)), val = trim(std::string_view(s).substr(eq + 1));
    if (key.empty()) throw ConfigError(source, ln, "", "missing key before '='");
    if (!known_keys().count(key)) throw ConfigError(source, ln, key, "unknown key");
    if (raw.count(key)) throw ConfigError(source, ln, key, "duplicate key (first on line " + std::to_string(raw[key].line) + ")");
    raw[key] = {val, ln};
    c.entries.emplace_back(key, val);
  }
  Parser P(source, raw);
  auto missing = [&](const std::string& k) { throw ConfigError(source, 0, k, "required key is missing"); };

  if (!P.has("mode")) missing("mode");
  std::string mode = P.text("mode");
  if (mode == "theory") c.mode = SweepMode::theory;
  else if (mode == "simulate") c.mode = SweepMode::simulate;
  else if (mode == "glm-baseline") c.mode = SweepMode::glm_baseline;
  else if (mode == "sample-complexity") c.mode = SweepMode::sample_complexity;
  else if (mode == "check") c.mode = SweepMode::check;
  else P.fail("mode", "expected theory | simulate | glm-baseline | sample-complexity | check, got '" + mode + "'");

  if (P.has("output")) c.output = P.text("output");
  auto reject = [&](std::initializer_list<const char*> keys) {
    for (const char* k : keys)
      if (P.has(k)) P.fail(k, std::string("not used in ") + to_string(c.mode) + " mode");
  };

  if (c.mode == SweepMode::check) {
    reject({"rho", "sigma", "lambda", "t", "psi_D", "psi_n", "psi_p", "sweep", "sweep_min", "sweep_max", "sweep_count",
            "sweep_spacing", "d", "seeds", "n_z", "n_test", "n_mc_score", "mehler_order", "score", "epsilon"});
    if (P.has("quick")) c.quick = P.boolean("quick");
    return c;
  }
  reject({"quick"});

  // activations
  auto activation = [&](const std::string& k, std::string& dst) {
    if (!P.has(k)) missing(k);
    dst = P.text(k);
    try {
      ActivationProfile::parse(dst);
    } catch (const std::exception& e) {
      P.fail(k, e.what());
    }
  };
  activation("sigma", c.sigma);
  if (c.mode == SweepMode::glm_baseline) reject({"rho", "lambda", "psi_n", "psi_p"});
  else activation("rho", c.rho);
  if (P.has("lambda")) {
    c.lambda = P.number("lambda");
    if (!(c.lambda > 0.0)) P.fail("lambda", "must be positive");
  }

  // swept axis
  if (!P.has("sweep")) missing("sweep");
  std::string ax = P.text("sweep");
  if (ax == "psi_p") c.axis = Axis::psi_p;
  else if (ax == "psi_n") c.axis = Axis::psi_n;
  else if (ax == "t") c.axis = Axis::t;
  else if (ax == "psi_D") c.axis = Axis::psi_D;
  else P.fail("sweep", "expected psi_p | psi_n | t | psi_D, got '" + ax + "'");
  if (c.mode == SweepMode::glm_baseline && !(c.axis == Axis::t || c.axis == Axis::psi_D))
    P.fail("sweep", "glm-baseline sweeps t or psi_D");
  if (c.mode == SweepMode::sample_complexity && c.axis != Axis::psi_n) P.fail("sweep", "sample-complexity sweeps psi_n");

  bool range = P.has("sweep_min") || P.has("sweep_max") || P.has("sweep_count") || P.has("sweep_spacing");
  std::vector<double> grid;
  if (range) {
    if (P.has(ax)) P.fail(ax, "swept axis given both as a list and as sweep_min/sweep_max/sweep_count");
    for (const char* k : {"sweep_min", "sweep_max", "sweep_count"})
      if (!P.has(k)) missing(k);
    bool log_sp = true;
    if (P.has("sweep_spacing")) {
      std::string sp = P.text("sweep_spacing");
      if (sp == "linear") log_sp = false;
      else if (sp != "log") P.fail("sweep_spacing", "expected log or linear");
    }
    long long cnt = P.integer("sweep_count");
    if (cnt < 1) P.fail("sweep_count", "grid is empty");
    if (cnt > 1000000) P.fail("sweep_count", "grid too large");
    try {
      grid = make_grid(P.number("sweep_min"), P.number("sweep_max"), int(cnt), log_sp);
    } catch (const std::exception& e) {
      P.fail("sweep_min", e.what());
    }
  } else {
    if (!P.has(ax)) P.fail("sweep", "swept axis needs either a '" + ax + "' list or sweep_min/sweep_max/sweep_count");
    grid = P.numbers(ax);
  }
  require_positive(P, P.has(ax) ? ax : "sweep_min", grid);

  auto fixed = [&](const std::string& k, std::vector<double>& dst, Axis a) {
    if (c.axis == a) {
      dst = grid;
      return;
    }
    if (!P.has(k)) missing(k);
    dst = P.numbers(k);
    require_positive(P, k, dst);
  };
  fixed("t", c.t, Axis::t);
  fixed("psi_D", c.psi_D, Axis::psi_D);
  if (c.mode != SweepMode::glm_baseline) {
    fixed("psi_n", c.psi_n, Axis::psi_n);
    fixed("psi_p", c.psi_p, Axis::psi_p);
  }
  if (c.mode == SweepMode::sample_complexity) {
    for (size_t i = 1; i < grid.size(); ++i)
      if (!(grid[i] > grid[i - 1])) P.fail(P.has(ax) ? ax : "sweep_min", "psi_n grid must ascend strictly");
    if (!P.has("epsilon")) missing("epsilon");
    c.epsilon = P.number("epsilon");
    if (!(c.epsilon > 0.0)) P.fail("epsilon", "must be positive");
  } else {
    reject({"epsilon"});
  }

  if (c.mode == SweepMode::simulate) {
    if (!P.has("d")) missing("d");
    if (!P.has("seeds")) missing("seeds");
    long long d = P.integer("d");
    if (d < 1 || d > 1000000) P.fail("d", "must be in [1, 1e6]");
    c.d = int(d);
    for (long long s : P.integers("seeds")) {
      if (s < 0) P.fail("seeds", "seeds must be non-negative");
      c.seeds.push_back(uint64_t(s));
    }
    if (std::set<uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) P.fail("seeds", "duplicate seed");
    auto intkey = [&](const char* k, int& dst, long long lo) {
      if (!P.has(k)) return;
      long long v = P.integer(k);
      if (v < lo || v > 100000000) P.fail(k, "out of range");
      dst = int(v);
    };
    intkey("n_z", c.n_z, 0);
    intkey("n_test", c.n_test, 2);
    intkey("n_mc_score", c.n_mc_score, 2);
    intkey("mehler_order", c.mehler_order, 1);
    if (c.mehler_order > 8) P.fail("mehler_order", "at most 8");
    if (P.has("score")) c.score = P.boolean("score");
    if (c.score && !ActivationProfile::parse(c.sigma).is_linear()) P.fail("score", "score error needs a linear sigma");
    auto count = [&](double psi, const char* k) {
      long long v = std::llround(psi * c.d);
      if (v < 1) P.fail(k, "psi * d rounds to zero");
      return v;
    };
    for (double x : c.psi_D) count(x, "psi_D");
    for (double x : c.psi_n) count(x, "psi_n");
    std::set<long long> ps;
    for (double x : c.psi_p)
      if (!ps.insert(count(x, "psi_p")).second) P.fail(c.axis == Axis::psi_p && !P.has("psi_p") ? "sweep_count" : "psi_p",
                                                      "two psi_p values give the same feature count at this d");
  } else {
    reject({"d", "seeds", "n_z", "n_test", "n_mc_score", "mehler_order", "score"});
  }
  return c;
}

SweepConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path, 0, "", "cannot open config file");
  return parse_config(f, path);
}

// ---------------------------------------------------------------- execution

namespace {

struct Row {
  double t = kNaN;
  std::string t_grid;
  double psi_D = kNaN, psi_n = kNaN, psi_p = kNaN;
  long long d = -1, D = -1, n = -1, p = -1, n_z = -1;
  double e_test = kNaN, e_train = kNaN, e_test_star = kNaN, e_score = kNaN;
  std::string baseline;
  double residual = kNaN, K = kNaN, dKdq = kNaN, dKdz = kNaN;
  double h2_score_max = kNaN, psi_n_star = kNaN;
  std::string sc_status;
  double mc[8] = {kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN, kNaN};
  std::vector<std::string> warnings;
  std::string error;
};

const std::vector<std::string> kColumns = {
    "mode",         "rho",          "sigma",       "t",           "t_grid",      "lambda",       "psi_D",
    "psi_n",        "psi_p",        "d",           "D",           "n",           "p",            "seeds",
    "n_z",          "e_test",       "e_train",     "e_test_star", "e_score",     "baseline_method", "residual",
    "K",            "dKdq",         "dKdz",        "h2_score_max", "epsilon",    "psi_n_star",   "sc_status",
    "mc_test_mean", "mc_test_se",   "mc_train_mean", "mc_train_se", "mc_score_mean", "mc_score_se", "mc_star_mean",
    "mc_star_se",   "warnings",     "error"};

std::string join(const std::vector<std::string>& v, const char* sep) {
  std::string o;
  for (size_t i = 0; i < v.size(); ++i) o += (i ? sep : "") + v[i];
  return o;
}

std::string int_or_empty(long long x) { return x < 0 ? std::string() : std::to_string(x); }

std::string seeds_text(const SweepConfig& c) {
  std::vector<std::string> s;
  for (auto x : c.seeds) s.push_back(std::to_string(x));
  return join(s, ";");
}

std::vector<std::string> cells(const SweepConfig& c, const Row& r) {
  bool glm = c.mode == SweepMode::glm_baseline;
  bool sc = c.mode == SweepMode::sample_complexity;
  std::vector<std::string> v = {to_string(c.mode),
                                glm ? "" : c.rho,
                                c.sigma,
                                format_double(r.t),
                                r.t_grid,
                                glm ? "" : format_double(c.lambda),
                                format_double(r.psi_D),
                                format_double(r.psi_n),
                                format_double(r.psi_p),
                                int_or_empty(r.d),
                                int_or_empty(r.D),
                                int_or_empty(r.n),
                                int_or_empty(r.p),
                                c.mode == SweepMode::simulate ? seeds_text(c) : "",
                                int_or_empty(r.n_z),
                                format_double(r.e_test),
                                format_double(r.e_train),
                                format_double(r.e_test_star),
                                format_double(r.e_score),
                                r.baseline,
                                format_double(r.residual),
                                format_double(r.K),
                                format_double(r.dKdq),
                                format_double(r.dKdz),
                                format_double(r.h2_score_max),
                                sc ? format_double(c.epsilon) : "",
                                format_double(r.psi_n_star),
                                r.sc_status};
  for (double x : r.mc) v.push_back(format_double(x));
  v.push_back(join(r.warnings, "; "));
  v.push_back(r.error);
  return v;
}

// grid points in (t, psi_D, psi_n, psi_p) order
struct GridPoint {
  double t, psi_D, psi_n, psi_p;
};
std::vector<GridPoint> grid_points(const SweepConfig& c) {
  std::vector<GridPoint> g;
  std::vector<double> one{kNaN};
  const auto& n = c.psi_n.empty() ? one : c.psi_n;
  const auto& p = c.psi_p.empty() ? one : c.psi_p;
  for (double t : c.t)
    for (double D : c.psi_D)
      for (double a : n)
        for (double b : p) g.push_back({t, D, a, b});
  return g;
}

std::string utc_now() {
  std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_atomic(const fs::path& path, const std::string& body) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + tmp.string());
    f << body;
    if (!f) throw std::runtime_error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

fs::path sibling(const fs::path& csv, const std::string& suffix) {
  fs::path p = csv;
  if (p.extension() == ".csv") p.replace_extension();
  p += suffix;
  return p;
}

class Logger {
 public:
  explicit Logger(std::ostream* os) : os_(os) {}
  void operator()(const std::string& s) {
    if (!os_) return;
    std::lock_guard<std::mutex> g(m_);
    *os_ << s << std::endl;
  }

 private:
  std::ostream* os_;
  std::mutex m_;
};

struct Baseline {
  double value = kNaN;
  BaselineMethod method = BaselineMethod::mp_closed_form;
  std::string error;
};

// exact-score baselines for each distinct (t, psi_D)
std::map<std::pair<double, double>, Baseline> baselines(const std::vector<std::pair<double, double>>& keys,
                                                         const ActivationProfile& sigma, int jobs, Logger& log) {
  std::vector<Baseline> out(keys.size());
  parallel_for(keys.size(), jobs, [&](size_t i) {
    try {
      ModelPoint p = make_point(keys[i].first, 1.0, keys[i].second, 1.0, 1.0, ActivationProfile::relu(), sigma);
      out[i].value = exact_test_error(p, &out[i].method);
    } catch (const std::exception& e) {
      out[i].error = std::string("exact baseline: ") + e.what();
    }
    std::ostringstream os;
    os << "baseline t=" << keys[i].first << " psi_D=" << keys[i].second << " -> "
       << (out[i].error.empty() ? format_double(out[i].value) : out[i].error);
    log(os.str());
  });
  std::map<std::pair<double, double>, Baseline> m;
  for (size_t i = 0; i < keys.size(); ++i) m[keys[i]] = out[i];
  return m;
}

void fill_theory(Row& r, const ModelPoint& mp, const Baseline& b) {
  if (!b.error.empty()) {
    KDerivatives kd = k_derivatives(mp);
    r.e_test = test_error(mp, kd);
    r.e_train = train_error(mp, kd);
    r.K = kd.K;
    r.dKdq = kd.dKdq;
    r.dKdz = kd.dKdz;
    r.residual = kd.residual;
    r.error = b.error;
    return;
  }
  CurvePoint cp = evaluate(mp, b.value);
  r.e_test = cp.e_test;
  r.e_train = cp.e_train;
  r.e_test_star = cp.e_test_star;
  r.e_score = cp.e_score;
  r.baseline = to_string(b.method);
  r.K = cp.K;
  r.dKdq = cp.dKdq;
  r.dKdz = cp.dKdz;
  r.residual = cp.residual;
  r.warnings = cp.warnings;
}

std::vector<Row> run_theory(const SweepConfig& c, const RunOptions& opt, Logger& log, bool simulate,
                            std::vector<std::string>* seed_rows);

std::vector<Row> run_glm(const SweepConfig& c, const RunOptions& opt, Logger& log) {
  ActivationProfile sigma = ActivationProfile::parse(c.sigma);
  std::vector<std::pair<double, double>> keys;
  for (double t : c.t)
    for (double D : c.psi_D) keys.emplace_back(t, D);
  std::vector<Row> rows(keys.size());
  parallel_for(keys.size(), opt.jobs, [&](size_t i) {
    Row& r = rows[i];
    r.t = keys[i].first;
    r.psi_D = keys[i].second;
    r.baseline = to_string(BaselineMethod::glm_replica);
    try {
      ModelPoint p = make_point(r.t, 1.0, r.psi_D, 1.0, 1.0, ActivationProfile::relu(), sigma);
      MmseResult m = mmse_per_d(p.t, p.psi_D, sigma);
      r.e_test_star = (p.a * p.a / p.h) * m.value;
      // envelope derivative vs finite difference, relative
      r.residual = std::abs(m.g_prime - m.g_prime_envelope) / std::max(1e-300, std::abs(m.g_prime));
      if (m.sp.boundary) r.warnings.push_back("saddle on the boundary");
      if (m.sp.local_maxima.size() > 1) r.warnings.push_back("several local maxima in the free energy");
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    log("glm t=" + format_double(r.t) + " psi_D=" + format_double(r.psi_D) + " -> " +
        (r.error.empty() ? format_double(r.e_test_star) : r.error));
  });
  return rows;
}

std::vector<Row> run_sample_complexity(const SweepConfig& c, const RunOptions& opt, Logger& log) {
  ActivationProfile rho = ActivationProfile::parse(c.rho), sigma = ActivationProfile::parse(c.sigma);
  std::vector<std::pair<double, double>> groups;
  for (double D : c.psi_D)
    for (double p : c.psi_p) groups.emplace_back(D, p);
  std::vector<std::string> tg;
  for (double t : c.t) tg.push_back(format_double(t));
  std::string t_grid = join(tg, ";");
  const size_t G = c.psi_n.size();
  std::vector<Row> rows(groups.size() * G);
  parallel_for(groups.size(), opt.jobs, [&](size_t g) {
    std::string err, outcome;
    SampleComplexity sc;
    double star = std::numeric_limits<double>::quiet_NaN();
    try {
      ModelPoint base = make_point(c.t.front(), c.lambda, groups[g].first, c.psi_n.front(), groups[g].second, rho, sigma);
      sc = sample_complexity(base, c.epsilon, c.t, c.psi_n);
      if (sc.psi_n_star) star = *sc.psi_n_star;
      outcome = std::isnan(star) ? "not achieved" : format_double(star);
    } catch (const std::exception& e) {
      err = outcome = e.what();
    }
    for (size_t i = 0; i < G; ++i) {
      Row& r = rows[g * G + i];
      r.t_grid = t_grid;
      r.psi_D = groups[g].first;
      r.psi_p = groups[g].second;
      r.psi_n = c.psi_n[i];
      r.error = err;
      if (!err.empty()) continue;
      r.h2_score_max = sc.worst[i];
      if (!std::isnan(star)) {
        r.psi_n_star = star;
        r.sc_status = sc.stable ? "achieved-stable" : "achieved-unstable";
      } else {
        r.sc_status = "not-achieved";
      }
    }
    log("sample complexity psi_D=" + format_double(groups[g].first) + " psi_p=" + format_double(groups[g].second) +
        " -> " + outcome);
  });
  return rows;
}

std::vector<Row> run_theory(const SweepConfig& c, const RunOptions& opt, Logger& log, bool simulate,
                            std::vector<std::string>* seed_rows) {
  ActivationProfile rho = ActivationProfile::parse(c.rho), sigma = ActivationProfile::parse(c.sigma);
  std::vector<GridPoint> pts = grid_points(c);
  std::vector<Row> rows(pts.size());

  // realized ratios in simulate mode
  auto ratio = [&](double psi) { return simulate ? double(std::llround(psi * c.d)) / c.d : psi; };
  std::set<std::pair<double, double>> keyset;
  for (const auto& g : pts) keyset.insert({g.t, ratio(g.psi_D)});
  auto base = baselines({keyset.begin(), keyset.end()}, sigma, opt.jobs, log);

  parallel_for(pts.size(), opt.jobs, [&](size_t i) {
    const GridPoint& g = pts[i];
    Row& r = rows[i];
    r.t = g.t;
    r.psi_D = g.psi_D;
    r.psi_n = g.psi_n;
    r.psi_p = g.psi_p;
    if (simulate) {
      r.d = c.d;
      r.D = std::llround(g.psi_D * c.d);
      r.n = std::llround(g.psi_n * c.d);
      r.p = std::llround(g.psi_p * c.d);
      r.n_z = c.n_z;
    }
    try {
      ModelPoint mp = make_point(g.t, c.lambda, ratio(g.psi_D), ratio(g.psi_n), ratio(g.psi_p), rho, sigma);
      fill_theory(r, mp, base.at({g.t, ratio(g.psi_D)}));
    } catch (const std::exception& e) {
      r.error = e.what();
    }
  });
  if (!simulate) return rows;

  // one task per (t, psi_D, psi_n, seed); feature counts nest
  struct Group {
    double t, psi_D, psi_n;
    std::vector<int> p_list;
    std::vector<size_t> rows;  // row index per p_list entry
  };
  std::vector<Group> groups;
  std::map<std::tuple<double, double, double>, size_t> gi;
  for (size_t i = 0; i < pts.size(); ++i) {
    auto key = std::make_tuple(pts[i].t, pts[i].psi_D, pts[i].psi_n);
    auto it = gi.find(key);
    if (it == gi.end()) {
      it = gi.emplace(key, groups.size()).first;
      groups.push_back({pts[i].t, pts[i].psi_D, pts[i].psi_n, {}, {}});
    }
    groups[it->second].rows.push_back(i);
  }
  for (auto& g : groups) {
    std::sort(g.rows.begin(), g.rows.end(), [&](size_t a, size_t b) { return rows[a].p < rows[b].p; });
    for (size_t r : g.rows) g.p_list.push_back(int(rows[r].p));
  }

  const size_t S = c.seeds.size();
  std::vector<SimConfig> cfgs(groups.size());
  double worst = 0.0;
  for (size_t k = 0; k < groups.size(); ++k) {
    SimConfig& s = cfgs[k];
    s.d = c.d;
    s.D = int(std::llround(groups[k].psi_D * c.d));
    s.n = int(std::llround(groups[k].psi_n * c.d));
    s.p = groups[k].p_list.back();
    s.t = groups[k].t;
    s.lambda = c.lambda;
    s.n_z = c.n_z;
    s.mehler_order = c.mehler_order;
    s.n_test = c.n_test;
    s.n_mc_score = c.n_mc_score;
    s.mem_budget_gib = opt.mem_budget_gib;
    worst = std::max(worst, estimated_bytes(s, s.p));
  }
  // run as many simulations side by side as the memory budget allows
  int sim_jobs = int(std::clamp(std::floor(opt.mem_budget_gib * double(1ull << 30) / std::max(1.0, worst)), 1.0,
                                double(std::max(1, opt.jobs))));
  std::vector<std::optional<SeedRun>> runs(groups.size() * S);
  std::vector<std::string> errs(groups.size() * S);
  std::atomic<size_t> done{0};
  parallel_for(runs.size(), sim_jobs, [&](size_t i) {
    size_t k = i / S, s = i % S;
    SimConfig sc = cfgs[k];
    sc.seed = c.seeds[s];
    try {
      runs[i] = simulate_seed(sc, groups[k].p_list, rho, sigma, c.score);
    } catch (const std::exception& e) {
      errs[i] = "seed " + std::to_string(sc.seed) + ": " + e.what();
    }
    std::ostringstream os;
    os << "[" << ++done << "/" << runs.size() << "] simulate t=" << sc.t << " psi_D=" << groups[k].psi_D
       << " psi_n=" << groups[k].psi_n << " seed=" << sc.seed << " "
       << (errs[i].empty() ? format_double(runs[i]->wall_seconds) + " s" : errs[i]);
    log(os.str());
  });

  for (size_t k = 0; k < groups.size(); ++k) {
    std::vector<SeedRun> ok;
    std::vector<std::string> e;
    for (size_t s = 0; s < S; ++s) {
      if (runs[k * S + s]) ok.push_back(*runs[k * S + s]);
      else e.push_back(errs[k * S + s]);
    }
    if (!e.empty()) {
      for (size_t r : groups[k].rows) rows[r].error += (rows[r].error.empty() ? "" : "; ") + join(e, "; ");
    } else {
      SimResult agg = aggregate(cfgs[k], groups[k].p_list, ok);
      for (size_t j = 0; j < groups[k].rows.size(); ++j) {
        Row& r = rows[groups[k].rows[j]];
        r.mc[0] = agg.test[j].mean;
        r.mc[1] = agg.test[j].se;
        r.mc[2] = agg.train[j].mean;
        r.mc[3] = agg.train[j].se;
        if (agg.score[j]) {
          r.mc[4] = agg.score[j]->mean;
          r.mc[5] = agg.score[j]->se;
          r.mc[6] = agg.star[j]->mean;
          r.mc[7] = agg.star[j]->se;
        }
      }
    }
    if (seed_rows) {
      for (size_t j = 0; j < groups[k].rows.size(); ++j) {
        const Row& r = rows[groups[k].rows[j]];
        for (size_t s = 0; s < S; ++s) {
          const auto& run = runs[k * S + s];
          std::vector<std::string> v = {format_double(r.t),   format_double(r.psi_D), format_double(r.psi_n),
                                        format_double(r.psi_p), std::to_string(r.d),  std::to_string(r.D),
                                        std::to_string(r.n),  std::to_string(r.p),    std::to_string(c.seeds[s]),
                                        std::to_string(c.n_z)};
          if (run) {
            const SimPoint& sp = run->points[j];
            for (double x : {sp.test.mean, sp.test.se, sp.train.mean, sp.train.se}) v.push_back(format_double(x));
            for (const auto& o : {sp.score, sp.star}) {
              v.push_back(o ? format_double(o->mean) : "");
              v.push_back(o ? format_double(o->se) : "");
            }
            v.push_back("");
          } else {
            for (int q = 0; q < 8; ++q) v.push_back("");
            v.push_back(csv_escape(errs[k * S + s]));
          }
          seed_rows->push_back(join(v, ","));
        }
      }
    }
  }
  return rows;
}

nlohmann::json config_echo(const SweepConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : c.entries) j[k] = v;
  return j;
}

}  // namespace

RunSummary run_sweep(const SweepConfig& c, const RunOptions& opt) {
  auto t0 = std::chrono::steady_clock::now();
  std::string started = utc_now();
  Logger log(opt.log);
  RunSummary sum;
  std::string out = opt.out ? *opt.out : c.output;
  if (out.empty() && c.mode != SweepMode::check) throw ConfigError(c.source, 0, "output", "no output path (config key or --out)");
  if (!(opt.mem_budget_gib > 0.0)) throw std::invalid_argument("memory budget must be positive");

  std::string body = "# schema=" + std::to_string(kCsvSchema) + "\n";
  std::vector<std::string> seed_rows;
  std::vector<Row> rows;
  if (c.mode == SweepMode::check) {
    CheckOptions co;
    co.quick = c.quick;
    co.jobs = opt.jobs;
    co.mem_budget_gib = opt.mem_budget_gib;
    co.on_result = [&](const CheckResult& r) { log(format_check_line(r)); };
    auto res = run_checks(co);
    body += "check,name,status,seconds,detail\n";
    for (const auto& r : res) {
      body += std::to_string(r.id) + "," + csv_escape(r.name) + "," + (r.passed ? "pass" : "fail") + "," +
              format_double(std::round(r.seconds * 10) / 10) + "," + csv_escape(r.detail) + "\n";
      if (!r.passed) {
        ++sum.errors;
        sum.error_lines.push_back("check " + std::to_string(r.id) + " failed: " + r.detail);
      }
    }
    sum.rows = int(res.size());
  } else {
    switch (c.mode) {
      case SweepMode::theory: rows = run_theory(c, opt, log, false, nullptr); break;
      case SweepMode::simulate: rows = run_theory(c, opt, log, true, &seed_rows); break;
      case SweepMode::glm_baseline: rows = run_glm(c, opt, log); break;
      case SweepMode::sample_complexity: rows = run_sample_complexity(c, opt, log); break;
      default: break;
    }
    body += join(kColumns, ",") + "\n";
    for (size_t i = 0; i < rows.size(); ++i) {
      std::vector<std::string> v = cells(c, rows[i]);
      for (auto& s : v) s = csv_escape(s);
      body += join(v, ",") + "\n";
      if (!rows[i].error.empty()) {
        ++sum.errors;
        std::ostringstream os;
        os << "row " << i + 1 << " (t=" << format_double(rows[i].t) << ", psi_D=" << format_double(rows[i].psi_D)
           << ", psi_n=" << format_double(rows[i].psi_n) << ", psi_p=" << format_double(rows[i].psi_p)
           << "): " << rows[i].error;
        sum.error_lines.push_back(os.str());
      }
    }
    sum.rows = int(rows.size());
  }
  sum.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out.empty()) return sum;

  fs::path csv = out;
  write_atomic(csv, body);
  sum.csv_path = csv.string();
  if (c.mode == SweepMode::simulate) {
    std::string sb = "# schema=" + std::to_string(kCsvSchema) + "\n";
    sb += "t,psi_D,psi_n,psi_p,d,D,n,p,seed,n_z,mc_test_mean,mc_test_se,mc_train_mean,mc_train_se,mc_score_mean,"
          "mc_score_se,mc_star_mean,mc_star_se,error\n";
    for (const auto& s : seed_rows) sb += s + "\n";
    fs::path sp = sibling(csv, ".seeds.csv");
    write_atomic(sp, sb);
    sum.seeds_path = sp.string();
  }
  nlohmann::json j;
  j["tool"] = "curves";
  j["version"] = kVersion;
  j["schema"] = kCsvSchema;
  j["mode"] = to_string(c.mode);
  j["config_file"] = c.source;
  j["config"] = config_echo(c);
  j["resolved"] = {{"axis", to_string(c.axis)}, {"t", c.t},           {"psi_D", c.psi_D}, {"psi_n", c.psi_n},
                   {"psi_p", c.psi_p},         {"lambda", c.lambda}, {"rho", c.rho},     {"sigma", c.sigma}};
  j["seeds"] = c.seeds;
  if (c.mode == SweepMode::simulate)
    j["simulation"] = {{"d", c.d},           {"n_z", c.n_z}, {"n_test", c.n_test}, {"n_mc_score", c.n_mc_score},
                       {"mehler_order", c.mehler_order}, {"score", c.score}, {"e_z", c.n_z == 0 ? "exact" : "sampled"}};
  j["jobs"] = opt.jobs;
  j["mem_budget_gib"] = opt.mem_budget_gib;
  j["started_utc"] = started;
  j["wall_seconds"] = sum.wall_seconds;
  j["rows"] = sum.rows;
  j["errors"] = sum.errors;
  j["csv"] = csv.filename().string();
  fs::path jp = sibling(csv, ".json");
  write_atomic(jp, j.dump(2) + "\n");
  sum.json_path = jp.string();
  return sum;
}

}  // namespace dsmrf
