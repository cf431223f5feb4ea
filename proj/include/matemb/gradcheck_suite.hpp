#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace matemb {

struct GradCheckResult {
  std::string name;
  double max_rel_err = 0.0;
  int trials = 0;
};

// Central-difference checks of every loss's analytic gradients (embedding
// gradients for all five losses, plus head gradients where a head exists) on
// seeded random instances. Worst relative error per loss across trials.
std::vector<GradCheckResult> run_loss_gradient_suite(std::uint64_t seed,
                                                     int trials);

}  // namespace matemb
