#pragma once

#include <span>
#include <string_view>

namespace nfembed {

struct Summary {
  double mean = 0.0;
  double sd = 0.0;  // n - 1 denominator
  std::size_t n = 0;
  bool single_sample = false;

  friend bool operator==(const Summary&, const Summary&) = default;
};

/// Mean and sample SD. A single value gives SD 0 with single_sample set.
/// Throws DataError for an empty input.
Summary aggregate(std::span<const double> values);

/// Regularized incomplete beta I_x(a, b), by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

/// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);
/// P(|T| >= |t|).
double student_t_two_sided_p(double t, double df);
/// t such that P(T <= t) = p, by bisection on the cdf.
double student_t_quantile(double p, double df);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
};

/// Corrected re-sampled t-test over k paired per-repeat differences:
/// t = mean(d) / sqrt((1/k + n_test/n_train) var(d)), df = k - 1.
/// Throws ConfigError for k < 2 or non-positive counts, DegenerateError when
/// every difference is identical up to rounding.
TTestResult corrected_resampled_ttest(std::span<const double> diffs, std::size_t n_train, std::size_t n_test);

/// "**" below 0.01, "*" below 0.05, otherwise empty.
std::string_view significance_stars(double p);

}  // namespace nfembed
