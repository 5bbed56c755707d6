#include "nfembed/prediction/regression.hpp"

#include <cmath>
#include <limits>

#include "nfembed/errors.hpp"

namespace nfembed {
namespace {

// Solves A x = r for symmetric positive definite A in place (Cholesky).
std::vector<double> solve_spd(std::vector<double> a, std::vector<double> r, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) {
    double d = a[j * n + j];
    for (std::size_t k = 0; k < j; ++k) d -= a[j * n + k] * a[j * n + k];
    if (!(d > 0)) throw DegenerateError("regressor: normal equations are singular");
    a[j * n + j] = std::sqrt(d);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a[i * n + j];
      for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
      a[i * n + j] = s / a[j * n + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) r[i] -= a[i * n + k] * r[k];
    r[i] /= a[i * n + i];
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) r[i] -= a[k * n + i] * r[k];
    r[i] /= a[i * n + i];
  }
  return r;
}

}  // namespace

double LinearRegressor::predict(std::span<const double> x) const {
  if (x.size() != w.size())
    throw DimensionError("regressor: input width " + std::to_string(x.size()) + ", expected " +
                         std::to_string(w.size()));
  double s = b;
  for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
  return s;
}

LinearRegressor train_regressor(const Tensor& x, std::span<const double> y) {
  if (y.size() != x.rows())
    throw DimensionError("regressor: " + std::to_string(y.size()) + " targets for " + std::to_string(x.rows()) +
                         " inputs");
  const std::size_t d = x.cols();
  std::vector<std::size_t> rows;
  for (std::size_t r = 0; r < y.size(); ++r)
    if (std::isfinite(y[r])) rows.push_back(r);
  if (rows.empty()) throw ConfigError("regressor: no targets");

  // Centre inputs and targets so the ridge does not touch the intercept.
  std::vector<double> mx(d, 0.0);
  double my = 0;
  for (std::size_t r : rows) {
    for (std::size_t j = 0; j < d; ++j) mx[j] += x.at(r, j);
    my += y[r];
  }
  const double n = static_cast<double>(rows.size());
  for (double& m : mx) m /= n;
  my /= n;

  std::vector<double> a(d * d, 0.0), rhs(d, 0.0);
  for (std::size_t r : rows)
    for (std::size_t i = 0; i < d; ++i) {
      const double xi = x.at(r, i) - mx[i];
      rhs[i] += xi * (y[r] - my);
      for (std::size_t j = 0; j < d; ++j) a[i * d + j] += xi * (x.at(r, j) - mx[j]);
    }
  double trace = 0;
  for (std::size_t i = 0; i < d; ++i) trace += a[i * d + i];
  const double ridge = 1e-10 * std::max(trace / static_cast<double>(std::max<std::size_t>(d, 1)), 1.0);
  for (std::size_t i = 0; i < d; ++i) a[i * d + i] += ridge;

  LinearRegressor out{d ? solve_spd(std::move(a), std::move(rhs), d) : std::vector<double>{}, my};
  for (std::size_t j = 0; j < d; ++j) out.b -= out.w[j] * mx[j];
  return out;
}

double rmse(const LinearRegressor& model, const Tensor& x, std::span<const double> y) {
  if (y.size() != x.rows())
    throw DimensionError("rmse: " + std::to_string(y.size()) + " targets for " + std::to_string(x.rows()) + " inputs");
  double s = 0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (!std::isfinite(y[r])) continue;
    const double e = model.predict(x.row(r)) - y[r];
    s += e * e;
    ++n;
  }
  return n ? std::sqrt(s / static_cast<double>(n)) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace nfembed
