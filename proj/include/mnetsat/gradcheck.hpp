#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mnetsat/tape.hpp"

namespace mnetsat::gradcheck {

struct Result {
  std::string name;
  double worst_rel_err = 0.0;
  int64_t coords_checked = 0;

  bool pass(double tol = 1e-4) const { return coords_checked > 0 && worst_rel_err < tol; }
};

// Builds a scalar root from differentiable leaves (one per input tensor).
using BuildFn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

// Central finite differences against the reverse-mode gradient. Checks every
// coordinate of tensors up to max_coords elements and a seeded random subset
// of larger ones.
Result check(const std::string& name, const std::vector<Tensor<double>>& inputs,
             const BuildFn& build, double step = 1e-5, int64_t max_coords = 256,
             uint64_t seed = 1234);

// The full op/block suite run by tests and the gradcheck CLI command.
std::vector<Result> run_suite(uint64_t seed);

}  // namespace mnetsat::gradcheck
