#include "nfembed/numerics/init.hpp"

#include <cmath>

namespace nfembed::init {

Tensor fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = fan_in ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
  for (double& v : t.values()) v = rng.uniform(-bound, bound);
  return t;
}

Tensor normal(Shape shape, double sd, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.normal(0.0, sd);
  return t;
}

}  // namespace nfembed::init
