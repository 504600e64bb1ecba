#pragma once

#include <cmath>
#include <stdexcept>

namespace laacoex {

// Digamma via upward recurrence into x >= 10 followed by the asymptotic
// expansion in 1/x^2 truncated after the x^-12 term. Absolute error is
// below 1e-13 across [1e-3, 1e6].
inline double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double acc = 0.0;
  while (x < 10.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number series: 1/12 x^-2 - 1/120 x^-4 + 1/252 x^-6 - ...
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

}  // namespace laacoex
