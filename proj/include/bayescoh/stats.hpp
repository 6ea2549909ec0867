#pragma once

#include <cstddef>
#include <span>
#include <string_view>

namespace bayescoh {

// Natural log of the gamma function for x > 0 (Lanczos approximation,
// relative error below 1e-10 over the domain used here).
double ln_gamma(double x);

// Regularized incomplete beta function I_x(a, b) for a, b > 0 and
// x in [0, 1], evaluated with Lentz's continued fraction. Absolute error
// better than 1e-10 across the t-distribution use cases below.
double incomplete_beta(double a, double b, double x);

// Two-sided tail probability P(|T| >= |t|) for a Student-t variable with
// `df` degrees of freedom: I_{df/(df+t^2)}(df/2, 1/2).
double student_t_two_sided_p(double t, double df);

// Positive critical value t* with P(|T| >= t*) == alpha, found by bisection
// on student_t_two_sided_p. Requires 0 < alpha < 1.
double student_t_critical(double alpha, double df);

struct Correlation {
  double r = 0.0;   // Pearson product-moment coefficient, clamped to [-1, 1]
  double p = 1.0;   // two-sided p-value under the t-distribution with n-2 df
  std::size_t n = 0;
};

// Pearson correlation with its two-sided p-value. Inputs must be the same
// length (LengthMismatch), have at least 3 observations (InsufficientData),
// and each vary (DegenerateVariance, message naming the offending input via
// `x_label` / `y_label`). When r^2 rounds to 1 the p-value is exactly 0.
Correlation pearson(std::span<const double> xs, std::span<const double> ys,
                    std::string_view x_label = "xs", std::string_view y_label = "ys");

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;      // standard error of the slope
  double residual_variance = 0.0; // SSE / (n - 2)
  std::size_t n = 0;
};

// Ordinary least squares y = intercept + slope * x. Requires equal lengths,
// n >= 3, and nonconstant x (DegenerateVariance naming `x_label`).
LinearFit ols_fit(std::span<const double> xs, std::span<const double> ys,
                  std::string_view x_label = "xs");

}  // namespace bayescoh
