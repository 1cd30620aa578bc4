#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "graphreason/gradcheck.hpp"

namespace graphreason {

struct SuiteOptions {
  std::size_t seeds = 10;
  GradCheckOptions check;
  // Test hook: the named op's adjoint is multiplied by corrupt_factor.
  std::string corrupt_op;
  Scalar corrupt_factor = 2;
  // Restricts the run to these case names when non-empty.
  std::vector<std::string> only;
};

struct SuiteEntry {
  std::string name;
  std::size_t seeds = 0;
  std::size_t seeds_passed = 0;
  Scalar max_error = 0;
  std::size_t checked = 0;
  std::size_t nonsmooth = 0;
  std::string worst;

  bool passed() const { return seeds > 0 && seeds_passed == seeds; }
};

std::vector<std::string> gradcheck_case_names();
// One entry per case, each checked on seeds 0..seeds-1.
std::vector<SuiteEntry> run_gradcheck_suite(const SuiteOptions& options = {});
std::string format_suite_entry(const SuiteEntry& entry);

}  // namespace graphreason
