#pragma once

// Log-gamma via the Stirling series.
//
//   ln Γ(x) = (x - 1/2) ln x - x + ln(2π)/2 + Σ_{j=1}^{8} B_{2j} / (2j (2j-1) x^{2j-1})
//
// evaluated for x >= 15 (truncation error below 1e-19 there); smaller
// arguments are shifted up with Γ(x+1) = x Γ(x). The ratio helper works on
// differences directly so that ln Γ(x+a) - ln Γ(x) stays accurate for
// x ~ 1e9 where the individual log-gammas are ~2e10.

#include <array>
#include <cmath>
#include <numbers>

#include "dhill/error.hpp"

namespace dhill::special {

namespace detail {

inline constexpr double kShiftThreshold = 15.0;

// B_{2j} / (2j (2j-1)), j = 1..8
inline constexpr std::array<double, 8> kStirling = {
    1.0 / 12.0,           -1.0 / 360.0,         1.0 / 1260.0,  -1.0 / 1680.0,
    1.0 / 1188.0,         -691.0 / 360360.0,    1.0 / 156.0,   -3617.0 / 122400.0,
};

// Tail Σ_j c_j x^{-(2j-1)}, Horner in 1/x^2.
inline double stirling_tail(double x) {
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double acc = 0.0;
  for (auto it = kStirling.rbegin(); it != kStirling.rend(); ++it) acc = acc * inv2 + *it;
  return acc * inv;
}

// log1p(z) - z without cancellation for small |z|.
inline double log1p_minus(double z) {
  if (std::fabs(z) > 0.25) return std::log1p(z) - z;
  // -z^2/2 + z^3/3 - ...
  double term = -z * z;
  double sum = 0.0;
  for (int j = 2; j < 80; ++j) {
    const double add = term / j;
    sum += add;
    if (std::fabs(add) <= 1e-18 * std::fabs(sum)) break;
    term *= -z;
  }
  return sum;
}

}  // namespace detail

/// ln Γ(x) for x > 0.
inline double log_gamma(double x) {
  if (!(x > 0.0) || !std::isfinite(x)) throw Error(ErrorKind::Domain, "log_gamma requires x > 0");
  double shift_log = 0.0;
  double prod = 1.0;
  while (x < detail::kShiftThreshold) {
    prod *= x;
    x += 1.0;
  }
  shift_log = std::log(prod);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  return (x - 0.5) * std::log(x) - x + half_log_2pi + detail::stirling_tail(x) - shift_log;
}

/// ln Γ(x + a) - ln Γ(x) - a ln x, for x > 0 and a >= 0.
///
/// Cancellation-free: for large x the value is (x+a-1/2) log1p(a/x) - a plus
/// the difference of Stirling tails.
inline double log_gamma_ratio_scaled(double x, double a) {
  if (!(x > 0.0) || !(a >= 0.0) || !std::isfinite(x) || !std::isfinite(a)) {
    throw Error(ErrorKind::Domain, "log_gamma_ratio_scaled requires x > 0, a >= 0");
  }
  if (a == 0.0) return 0.0;
  double correction = 0.0;
  double y = x;
  while (y < detail::kShiftThreshold) {
    correction -= std::log1p(a / y);
    y += 1.0;
  }
  if (y != x) correction += a * std::log(y / x);
  // (y + a - 1/2) log1p(z) - a with z = a/y, split as
  // y (log1p(z) - z) + (a - 1/2) log1p(z) since y z = a.
  const double z = a / y;
  const double core = y * detail::log1p_minus(z) + (a - 0.5) * std::log1p(z) +
                      (detail::stirling_tail(y + a) - detail::stirling_tail(y));
  return core + correction;
}

/// ln Γ(x + a) - ln Γ(x).
inline double log_gamma_ratio(double x, double a) {
  return log_gamma_ratio_scaled(x, a) + a * std::log(x);
}

}  // namespace dhill::special
