#include <CLI11.hpp>
#include <Eigen/Core>
#include <iostream>
#include <thread>

#include "dsmrf/checks.hpp"
#include "dsmrf/sweep.hpp"

namespace {

int default_jobs() { return int(std::max(1u, std::thread::hardware_concurrency())); }

int report(const dsmrf::RunSummary& s) {
  if (!s.csv_path.empty()) std::cerr << "wrote " << s.csv_path << " (" << s.rows << " rows)\n";
  if (!s.seeds_path.empty()) std::cerr << "wrote " << s.seeds_path << "\n";
  if (!s.json_path.empty()) std::cerr << "wrote " << s.json_path << "\n";
  for (const auto& e : s.error_lines) std::cerr << "error: " << e << "\n";
  if (s.errors) std::cerr << s.errors << " of " << s.rows << " rows failed\n";
  return s.errors ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Asymptotic learning curves of denoising score matching with random features"};
  app.require_subcommand(1);

  int jobs = default_jobs();
  double mem = 8.0;
  std::string config, out;
  bool quiet = false, quick = false;
  std::vector<int> only;

  auto* run = app.add_subcommand("run", "evaluate a sweep config, write CSV + JSON sidecar");
  run->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  run->add_option("--jobs,-j", jobs, "worker threads")->envname("CURVES_JOBS")->check(CLI::PositiveNumber);
  run->add_option("--out,-o", out, "output CSV (overrides the config's output key)")->envname("CURVES_OUT");
  run->add_option("--mem-budget", mem, "memory budget in GiB for simulations")
      ->envname("CURVES_MEM_BUDGET")
      ->check(CLI::PositiveNumber);
  run->add_flag("--quiet,-q", quiet, "no progress on stderr")->envname("CURVES_QUIET");

  auto* check = app.add_subcommand("check", "run the cross-module check suite");
  check->add_flag("--quick", quick, "reduced problem sizes")->envname("CURVES_QUICK");
  check->add_option("--jobs,-j", jobs, "worker threads")->envname("CURVES_JOBS")->check(CLI::PositiveNumber);
  check->add_option("--mem-budget", mem, "memory budget in GiB")->envname("CURVES_MEM_BUDGET")->check(CLI::PositiveNumber);
  check->add_option("--only", only, "check ids to run")->delimiter(',')->check(CLI::Range(1, 10));

  app.add_subcommand("version", "print version");

  CLI11_PARSE(app, argc, argv);

  if (app.got_subcommand("version")) {
    std::cout << "curves " << dsmrf::kVersion << " (csv schema " << dsmrf::kCsvSchema << ", eigen " << EIGEN_WORLD_VERSION
              << "." << EIGEN_MAJOR_VERSION << "." << EIGEN_MINOR_VERSION << ")\n";
    return 0;
  }

  if (run->parsed()) {
    try {
      dsmrf::SweepConfig cfg = dsmrf::load_config(config);
      dsmrf::RunOptions opt;
      opt.jobs = jobs;
      opt.mem_budget_gib = mem;
      if (!out.empty()) opt.out = out;
      if (!quiet) opt.log = &std::cerr;
      return report(dsmrf::run_sweep(cfg, opt));
    } catch (const dsmrf::ConfigError& e) {
      std::cerr << "config error: " << e.what() << "\n";
      return 2;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 3;
    }
  }

  dsmrf::CheckOptions co;
  co.quick = quick;
  co.jobs = jobs;
  co.mem_budget_gib = mem;
  co.only = only;
  co.on_result = [](const dsmrf::CheckResult& r) { std::cout << dsmrf::format_check_line(r) << std::endl; };
  auto res = dsmrf::run_checks(co);
  int failed = 0;
  for (const auto& r : res) failed += !r.passed;
  std::cout << (res.size() - failed) << "/" << res.size() << " checks passed\n";
  return failed ? 1 : 0;
}
