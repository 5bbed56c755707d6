#include "nfembed/eval/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "nfembed/errors.hpp"

namespace nfembed {

Summary aggregate(std::span<const double> values) {
  if (values.empty()) throw DataError("aggregate: no values");
  Summary s;
  s.n = values.size();
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(s.n);
  if (s.n == 1) {
    s.single_sample = true;
    return s;
  }
  double q = 0;
  for (double v : values) q += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(q / static_cast<double>(s.n - 1));
  return s;
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz; converges for x < (a+1)/(a+b+2).
double beta_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300, tol = 1e-16;
  double c = 1.0, d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((a + m2 - 1.0) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (a + b + m) * x / ((a + m2) * (a + m2 + 1.0));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double step = d * c;
    h *= step;
    if (std::abs(step - 1.0) < tol) return h;
  }
  return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw ConfigError("incomplete_beta: a and b must be positive");
  if (std::isnan(x)) return x;
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_fraction(a, b, x) / a;
  return 1.0 - front * beta_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0)) throw ConfigError("student t: df must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

double student_t_cdf(double t, double df) {
  const double tail = 0.5 * student_t_two_sided_p(t, df);
  return t >= 0 ? 1.0 - tail : tail;
}

double student_t_quantile(double p, double df) {
  if (!(p > 0 && p < 1)) throw ConfigError("student t quantile: p must lie in (0, 1)");
  double lo = -1.0, hi = 1.0;
  while (student_t_cdf(lo, df) > p) lo *= 2;
  while (student_t_cdf(hi, df) < p) hi *= 2;
  for (int i = 0; i < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++i) {
    const double mid = 0.5 * (lo + hi);
    (student_t_cdf(mid, df) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TTestResult corrected_resampled_ttest(std::span<const double> diffs, std::size_t n_train, std::size_t n_test) {
  const std::size_t k = diffs.size();
  if (k < 2) throw ConfigError("t-test: need at least 2 repeats, got " + std::to_string(k));
  if (n_train == 0 || n_test == 0) throw ConfigError("t-test: subject counts must be positive");
  const Summary s = aggregate(diffs);
  const double var = s.sd * s.sd;
  // spread at rounding level counts as none: accuracies such as 0.5 - 0.58
  // and 0.42 - 0.5 differ only in the last bits
  double magnitude = 0.0;
  for (double d : diffs) magnitude = std::max(magnitude, std::abs(d));
  if (!(var > 0) || s.sd <= 1e-12 * magnitude) throw DegenerateError("t-test: differences identical across repeats");
  const double scale = 1.0 / static_cast<double>(k) + static_cast<double>(n_test) / static_cast<double>(n_train);
  TTestResult r;
  r.df = static_cast<double>(k - 1);
  r.t = s.mean / std::sqrt(scale * var);
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

std::string_view significance_stars(double p) {
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

}  // namespace nfembed
