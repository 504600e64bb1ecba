#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "laacoex/digamma.hpp"

namespace {

// Independent reference: push the argument above 1e5 with the recurrence
// (compensated summation), then use only the first three asymptotic terms,
// whose truncation error is far below 1e-20 there.
double digamma_reference(double x) {
  double acc = 0.0, comp = 0.0;
  while (x < 1e5) {
    const double term = -1.0 / x;
    const double y = term - comp;
    const double t = acc + y;
    comp = (t - acc) - y;
    acc = t;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  return acc + std::log(x) - 0.5 * inv - inv * inv / 12.0;
}

}  // namespace

TEST_CASE("digamma reference values") {
  constexpr double euler_mascheroni = 0.57721566490153286;
  CHECK(laacoex::digamma(1.0) == Catch::Approx(-euler_mascheroni).margin(1e-13));
  CHECK(laacoex::digamma(0.5) ==
        Catch::Approx(-euler_mascheroni - 2.0 * std::log(2.0)).margin(1e-13));
  CHECK(laacoex::digamma(2.0) - laacoex::digamma(1.0) == Catch::Approx(1.0).margin(1e-13));
}

TEST_CASE("digamma recurrence psi(x+1) = psi(x) + 1/x") {
  for (double x : {1e-3, 0.02, 0.7, 1.5, 9.99, 42.0, 1e4}) {
    CHECK(laacoex::digamma(x + 1.0) - laacoex::digamma(x) ==
          Catch::Approx(1.0 / x).margin(1e-11));
  }
}

TEST_CASE("digamma matches the shifted-asymptotic reference across the range") {
  for (double x : {1e-3, 7e-3, 0.04, 0.3, 1.0, 2.5, 9.7, 10.3, 117.0, 4096.0, 9.9e5}) {
    const double want = digamma_reference(x);
    CHECK(std::abs(laacoex::digamma(x) - want) < 1e-12 * std::max(1.0, std::abs(want)));
  }
}

TEST_CASE("digamma rejects nonpositive arguments") {
  CHECK_THROWS_AS(laacoex::digamma(0.0), std::domain_error);
  CHECK_THROWS_AS(laacoex::digamma(-1.5), std::domain_error);
}
