#pragma once

#include <cmath>
#include <limits>

namespace bcadmm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Locally supported log-barrier. barrier(x) = max(0, (eps-x)^4 / x^5) for
/// x > 0 and +inf for x <= 0. Identically zero for x >= eps with the value
/// and its first two derivatives vanishing at x = eps (quartic contact), and
/// diverging monotonically as x -> 0+.
struct LogBarrier {
  double eps = 1.0;

  explicit LogBarrier(double eps_) : eps(eps_) {}
  LogBarrier() = default;

  double value(double x) const {
    if (x <= 0.0) return kInf;
    if (x >= eps) return 0.0;
    const double e = eps - x;
    const double e2 = e * e;
    return e2 * e2 / (x * x * x * x * x);
  }

  // First derivative; only meaningful on x > 0.
  double d1(double x) const {
    if (x >= eps) return 0.0;
    const double e = eps - x;
    const double x2 = x * x;
    const double x6 = x2 * x2 * x2;
    return -e * e * e * (5.0 * eps - x) / x6;
  }

  // Second derivative; only meaningful on x > 0.
  double d2(double x) const {
    if (x >= eps) return 0.0;
    const double e = eps - x;
    const double x2 = x * x;
    const double x7 = x2 * x2 * x2 * x;
    return 2.0 * e * e * (x * x - 10.0 * eps * x + 15.0 * eps * eps) / x7;
  }

  struct Eval {
    double value;
    double d1;
    double d2;
  };

  Eval eval(double x) const {
    if (x <= 0.0) return {kInf, 0.0, 0.0};
    return {value(x), d1(x), d2(x)};
  }
};

}  // namespace bcadmm
