// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vlmq::checks {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SuiteResult {
  std::string suite;
  std::vector<CheckResult> checks;

  bool all_pass() const;
};

// Oracle replay suites shared by `vlmq check` and the acceptance tests.
SuiteResult run_quant_suite(std::uint64_t seed);
SuiteResult run_backward_suite(std::uint64_t seed);
SuiteResult run_solver_suite(std::uint64_t seed);
std::vector<SuiteResult> run_all_suites(std::uint64_t seed);

} // namespace vlmq::checks
