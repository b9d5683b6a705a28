#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dernn {

enum class SelftestLevel { kQuick, kFull };

struct SelftestOptions {
  SelftestLevel level = SelftestLevel::kQuick;
  std::uint64_t seed = 0;
  // Mutation hook: flips the sign of one kernel tap in the conv fixture.
  bool tamper_conv_sign = false;
};

struct SelftestCheck {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;  // exception text when the check threw
};

// Runs every oracle check. The full level adds the 9-stage TV reconstruction
// property on the synthetic phantom.
std::vector<SelftestCheck> run_selftest(const SelftestOptions& opt = {});

bool all_passed(const std::vector<SelftestCheck>& checks);

// Fixed-width table: check, max_error, tolerance, status.
std::string selftest_table(const std::vector<SelftestCheck>& checks);

}  // namespace dernn
