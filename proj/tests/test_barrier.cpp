#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "bcadmm/barrier.hpp"

using bcadmm::kInf;
using bcadmm::LogBarrier;

TEST_CASE("barrier is identically zero on the supported branch") {
  LogBarrier b(0.1);
  auto e = b.eval(0.2);
  CHECK(e.value == 0.0);
  CHECK(e.d1 == 0.0);
  CHECK(e.d2 == 0.0);
  CHECK(b.value(0.1) == 0.0);
}

TEST_CASE("barrier closed form inside the support") {
  LogBarrier b(0.1);
  // (eps-x)^4 / x^5 at eps=0.1, x=0.05: (0.05)^4/(0.05)^5 = 20.
  CHECK(b.value(0.05) == Catch::Approx(20.0).epsilon(1e-14));
}

TEST_CASE("barrier is +inf for nonpositive arguments") {
  LogBarrier b(0.1);
  CHECK(b.value(-0.01) == kInf);
  CHECK(b.value(0.0) == kInf);
}

TEST_CASE("barrier diverges monotonically towards zero") {
  LogBarrier b(0.1);
  double prev = b.value(0.09);
  for (double x = 0.08; x > 1e-4; x *= 0.5) {
    const double v = b.value(x);
    CHECK(v > prev);
    prev = v;
  }
}

TEST_CASE("barrier derivatives match central finite differences") {
  LogBarrier b(0.3);
  std::mt19937 rng(42);
  std::uniform_real_distribution<double> u(0.02, 0.29);
  for (int i = 0; i < 200; ++i) {
    const double x = u(rng);
    const double h = 1e-6 * (1.0 + x);
    const double fd1 = (b.value(x + h) - b.value(x - h)) / (2 * h);
    const double fd2 = (b.d1(x + h) - b.d1(x - h)) / (2 * h);
    CHECK(b.d1(x) == Catch::Approx(fd1).epsilon(1e-5).margin(1e-9));
    CHECK(b.d2(x) == Catch::Approx(fd2).epsilon(1e-5).margin(1e-9));
  }
}

TEST_CASE("barrier has quartic contact at the support boundary") {
  const double eps = 0.1;
  LogBarrier b(eps);
  // |b'| and |b''| vanish as x -> eps from below.
  double prev1 = kInf, prev2 = kInf;
  for (double h : {1e-2 * eps, 1e-4 * eps, 1e-6 * eps}) {
    const double x = eps - h;
    const double d1 = std::abs(b.d1(x));
    const double d2 = std::abs(b.d2(x));
    CHECK(d1 < prev1);
    CHECK(d2 < prev2);
    // closed-form contact order: b' ~ -h^3*(4eps)/eps^6, b'' ~ h^2*...
    CHECK(d1 <= 5.0 * h * h * h * (5.0 * eps) / std::pow(eps - h, 6));
    prev1 = d1;
    prev2 = d2;
  }
  CHECK(prev1 < 1e-12);
  CHECK(prev2 < 1e-6);
}
