#pragma once

#include <functional>
#include <string>
#include <vector>

namespace dsmrf {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0;
};

struct CheckOptions {
  bool quick = false;  // reduced sizes, same thresholds
  int jobs = 1;
  double mem_budget_gib = 8.0;
  std::vector<int> only;  // empty: all
  std::function<void(const CheckResult&)> on_result;
};

// the cross-module acceptance suite, ids 1..10
std::vector<CheckResult> run_checks(const CheckOptions& opt);
std::string format_check_line(const CheckResult& r);

}  // namespace dsmrf
