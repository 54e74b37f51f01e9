#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace tafnet {

struct GradSuiteEntry {
  std::string name;
  double max_rel_err = 0.0;  // worst over all seeds
  double tolerance = 0.0;
  bool passed() const { return max_rel_err < tolerance; }
};

// Finite-difference checks for every differentiable op and composite
// block, repeated over `num_seeds` random seeds. Primitive ops are held
// to 1e-6, composite blocks to 1e-5, and the end-to-end model loss to
// 1e-4 at desk shapes.
std::vector<GradSuiteEntry> run_grad_suite(int num_seeds, uint64_t base_seed);

bool grad_suite_passed(const std::vector<GradSuiteEntry>& entries);

}  // namespace tafnet
