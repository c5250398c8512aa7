#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dsmrf {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kCsvSchema = 1;

enum class SweepMode { theory, simulate, glm_baseline, sample_complexity, check };
enum class Axis { psi_p, psi_n, t, psi_D };
const char* to_string(SweepMode m);
const char* to_string(Axis a);

// parse/validation problem; line is 0 when the key is missing altogether
struct ConfigError : std::runtime_error {
  ConfigError(const std::string& source, int line, const std::string& key, const std::string& msg);
  int line;
  std::string key;
};

struct SweepConfig {
  SweepMode mode = SweepMode::theory;
  std::string rho = "relu", sigma = "identity";
  double lambda = 1e-4;
  // after validation the swept axis list holds the resolved grid
  std::vector<double> t, psi_D, psi_n, psi_p;
  Axis axis = Axis::psi_p;
  // simulate
  int d = 0;
  std::vector<uint64_t> seeds;
  int n_z = 0, n_test = 4096, n_mc_score = 4096, mehler_order = 3;
  bool score = false;
  // sample-complexity
  double epsilon = 0;
  // check
  bool quick = false;
  std::string output;
  // raw key/value pairs in file order, echoed into the sidecar
  std::vector<std::pair<std::string, std::string>> entries;
  std::string source;
};

// flat "key = value" lines, '#' comments, comma-separated lists
SweepConfig parse_config(std::istream& in, const std::string& source = "<config>");
SweepConfig load_config(const std::string& path);

std::vector<double> make_grid(double lo, double hi, int count, bool log_spacing);

struct RunOptions {
  int jobs = 1;
  std::optional<std::string> out;
  double mem_budget_gib = 8.0;
  std::ostream* log = nullptr;  // progress and per-point errors
};

struct RunSummary {
  int rows = 0;
  int errors = 0;
  std::vector<std::string> error_lines;
  std::string csv_path, json_path, seeds_path;
  double wall_seconds = 0;
};

// writes the CSV (and sidecar, and per-seed table in simulate mode); throws ConfigError before writing anything
RunSummary run_sweep(const SweepConfig& cfg, const RunOptions& opt);

// "%.17g", empty for NaN
std::string format_double(double x);
std::string csv_escape(const std::string& s);

}  // namespace dsmrf
