#pragma once

#include <functional>
#include <span>
#include <string>

#include "nfembed/numerics/tape.hpp"

namespace nfembed {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Builds a scalar loss on the given tape. Must be deterministic.
using LossBuilder = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences
/// (f(theta + eps) - f(theta - eps)) / (2 eps) for every coordinate of every
/// parameter. Relative error is |a - n| / max(|a|, |n|, 1e-12).
GradCheckResult grad_check(const LossBuilder& loss, std::span<Parameter* const> params, double eps = 1e-5);

}  // namespace nfembed
