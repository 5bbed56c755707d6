#pragma once

#include <span>

#include "nfembed/numerics/tensor.hpp"

namespace nfembed {

/// Affine map from an embedding to one raw trait value.
struct LinearRegressor {
  std::vector<double> w;
  double b = 0.0;

  double predict(std::span<const double> x) const;
};

/// Least squares fit on the rows with a finite target (NaN marks a missing
/// value). A 1e-10 ridge keeps collinear inputs solvable. Throws
/// DimensionError on a length mismatch and ConfigError without any target.
LinearRegressor train_regressor(const Tensor& x, std::span<const double> y);

/// Root mean squared error over the rows with a finite target.
double rmse(const LinearRegressor& model, const Tensor& x, std::span<const double> y);

}  // namespace nfembed
