#pragma once

#include "nfembed/numerics/rng.hpp"
#include "nfembed/numerics/tensor.hpp"

namespace nfembed::init {

/// Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng);

Tensor normal(Shape shape, double sd, Rng& rng);

}  // namespace nfembed::init
