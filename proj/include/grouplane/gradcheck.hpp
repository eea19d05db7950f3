#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace grouplane {

struct GradCheckEntry {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = true;
};

// Central finite differences against the analytic gradients for every
// differentiable operation, the losses and an end-to-end micro network.
// relative error must stay within 1e-4 at 64-bit over `seeds` seeds per op.
// negative_control deliberately negates one op's analytic gradient and
// expects the comparison to fail.
GradCheckReport run_gradcheck(uint64_t seed, int seeds = 20,
                              bool negative_control = false);

}  // namespace grouplane
