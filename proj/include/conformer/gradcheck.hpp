#pragma once

#include <functional>
#include <string>
#include <vector>

#include "conformer/params.hpp"
#include "conformer/rng.hpp"
#include "conformer/tape.hpp"

namespace conformer {

struct GradCheckEntry {
  std::string name;
  int64_t checked_coords;
  double max_rel_err;
  double max_abs_err;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = false;
  double worst_rel_err = 0.0;
  std::string worst_name;
  std::string to_string() const;
};

// Central-difference check of analytic gradients.
//
// forward must evaluate the model to a scalar loss from the current parameter
// values, recording on the tape when one is given. It is run twice up front
// and must produce bit-identical results, otherwise the check aborts with a
// ContractError naming the divergence (finite differences are meaningless on a
// non-deterministic function).
//
// For every trainable parameter up to max_coords coordinates are probed
// (chosen by rng when the tensor is larger); rel err is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
GradCheckReport grad_check(const std::function<Tensor(Tape*)>& forward, ParamStore& params,
                           double eps, double tol, int64_t max_coords, Rng& rng);

}  // namespace conformer
