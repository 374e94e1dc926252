#pragma once

#include "unidual/ops.hpp"
#include "unidual/params.hpp"

namespace unidual {

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int coords_checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool passed(double tol) const { return max_rel_err <= tol; }
};

// Central-difference check of the tape gradients: forward(tape) must build
// the scalar loss from the given parameters; forward(nullptr) re-evaluates
// it. Tensors larger than max_coords are checked on a seeded random
// coordinate sample. Relative error is |a−n| / max(|a|,|n|,1e-8).
// Meant for 64-bit networks with normalization disabled or frozen.
template <class T>
GradCheckReport grad_check(const std::function<Var<T>(Tape<T>*)>& forward,
                           const std::vector<Parameter<T>>& params, T eps,
                           int max_coords, uint64_t seed);

}  // namespace unidual
