#pragma once

// Closed-form reference values: the Pareto order-statistic moment g(k, n, rho),
// asymptotic bias and variance, the limit covariance of the R-statistics,
// generalized Pareto moments and the rate-optimal k_n.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>

#include "dhill/error.hpp"
#include "dhill/special.hpp"

namespace dhill::theory {

using Matrix3 = std::array<std::array<double, 3>, 3>;

/// Parametric tail: A(t) = c_A t^rho, B(t) = c_B t^rho_tilde.
struct TheoryModel {
  double gamma = 1.0;
  double rho = -1.0;
  double rho_tilde = -1.0;
  double c_A = 0.0;
  double c_B = 0.0;

  void validate() const {
    if (!(gamma > 0.0)) throw Error(ErrorKind::Domain, "gamma must be positive");
    if (!(rho < 0.0)) throw Error(ErrorKind::Domain, "rho must be negative");
    if (!(rho_tilde <= 0.0)) throw Error(ErrorKind::Domain, "rho_tilde must be <= 0");
  }

  double A(double t) const { return c_A * std::pow(t, rho); }
  double B(double t) const { return c_B * std::pow(t, rho_tilde); }
};

struct LimitLaw {
  double mean_shift = 0.0;
  double variance = 0.0;
  Matrix3 covariance3{};
};

/// E[((k/n) Y^{(k+1)})^rho] for the (k+1)-th largest of n Pareto(1) draws:
/// (k/n)^rho Γ(n+1) Γ(k-rho+1) / (Γ(n-rho+1) Γ(k+1)).
inline double g_exact(double k, double n, double rho) {
  if (!(k >= 1.0) || !(k <= n)) throw Error(ErrorKind::Domain, "g(k, n, rho) needs 1 <= k <= n");
  if (!(rho <= 0.0)) throw Error(ErrorKind::Domain, "g(k, n, rho) needs rho <= 0");
  const double a = -rho;
  // log g = L(k+1, a) - L(n+1, a) + a (log1p(1/k) - log1p(1/n)),
  // L(x, a) = ln Γ(x+a) - ln Γ(x) - a ln x.
  const double log_g = special::log_gamma_ratio_scaled(k + 1.0, a) - special::log_gamma_ratio_scaled(n + 1.0, a) +
                       a * (std::log1p(1.0 / k) - std::log1p(1.0 / n));
  return std::exp(log_g);
}

/// Limit of g as n grows with k fixed: k^rho Γ(k-rho+1) / Γ(k+1).
inline double g_fixed_k_limit(double k, double rho) {
  if (!(k >= 1.0)) throw Error(ErrorKind::Domain, "k must be >= 1");
  if (!(rho <= 0.0)) throw Error(ErrorKind::Domain, "rho must be <= 0");
  const double a = -rho;
  return std::exp(special::log_gamma_ratio_scaled(k + 1.0, a) + a * std::log1p(1.0 / k));
}

/// 1 + (rho^2 - rho)/(2k) - (rho^2 - rho)/(2(n - rho)), accurate to O(k^-2).
inline double g_expansion(double k, double n, double rho) {
  if (!(k >= 1.0) || !(k <= n)) throw Error(ErrorKind::Domain, "g expansion needs 1 <= k <= n");
  const double c = 0.5 * (rho * rho - rho);
  return 1.0 + c / k - c / (n - rho);
}

/// Leading bias of the distributed Hill estimator: A(n/k) g(k, n, rho) / (1 - rho).
inline double dh_asymptotic_bias(const TheoryModel& model, double k, double n) {
  model.validate();
  return model.A(n / k) * g_exact(k, n, model.rho) / (1.0 - model.rho);
}

/// gamma^2 (1 + (1/rho - 1)^2), the limit variance of sqrt(k_n m)(tilde gamma - gamma).
inline double unbiased_asymptotic_variance(double gamma, double rho) {
  if (!(rho < 0.0)) throw Error(ErrorKind::Domain, "rho must be negative");
  const double d = 1.0 / rho - 1.0;
  return gamma * gamma * (1.0 + d * d);
}

/// Limit variance coefficient of the plain (distributed) Hill estimator.
inline double hill_asymptotic_variance(double gamma) { return gamma * gamma; }

/// Limit covariance of the normalized R^{(1)}, R^{(2)}, R^{(3)} fluctuations,
/// i.e. the covariance of (E, E^2, E^3) for E standard exponential.
///
/// Entry (2,3) is the reference value 98. The moment identity
/// Cov(E^a, E^b) = (a+b)! - a! b! gives 108 there; the bias-corrected
/// variance only involves the (1,2) block and is unaffected.
inline Matrix3 limit_covariance() {
  return Matrix3{{{1.0, 4.0, 18.0}, {4.0, 20.0, 98.0}, {18.0, 98.0, 684.0}}};
}

inline LimitLaw unbiased_limit_law(const TheoryModel& model) {
  model.validate();
  return LimitLaw{0.0, unbiased_asymptotic_variance(model.gamma, model.rho), limit_covariance()};
}

/// E[T^a] for T = (Y^rho - 1)/rho, Y Pareto(1): a! / Π_{i=1}^{a} (1 - i rho).
inline double gpd_raw_moment(int a, double rho) {
  if (a < 1 || a > 4) throw Error(ErrorKind::Domain, "moment order must be 1..4");
  double num = 1.0;
  double den = 1.0;
  for (int i = 1; i <= a; ++i) {
    num *= i;
    den *= 1.0 - i * rho;
  }
  return num / den;
}

/// E[Z_k^a] ≈ (1 - rho)^{-a} (1 + a(a-1) / (2(1 - 2 rho) k)).
inline double zk_moment_expansion(int a, double k, double rho) {
  if (a < 1 || a > 4) throw Error(ErrorKind::Domain, "moment order must be 1..4");
  if (!(k >= 1.0)) throw Error(ErrorKind::Domain, "k must be >= 1");
  if (!(rho < 0.0)) throw Error(ErrorKind::Domain, "rho must be negative");
  const double lead = std::pow(1.0 - rho, -a);
  return lead * (1.0 + a * (a - 1) / (2.0 * (1.0 - 2.0 * rho)) / k);
}

/// rho* = rho + max(rho, rho_tilde).
inline double rho_star(double rho, double rho_tilde) { return rho + std::max(rho, rho_tilde); }

/// Unit-constant rate N^{-2 rho*/(1 - 2 rho*)} / m, unrounded.
inline double optimal_kn_rate(double total_n, double machines, double rho, double rho_tilde) {
  if (!(rho < 0.0)) throw Error(ErrorKind::Domain, "rho must be negative");
  if (!(total_n >= 1.0) || !(machines >= 1.0)) throw Error(ErrorKind::Domain, "N and m must be positive");
  const double rs = rho_star(rho, rho_tilde);
  const double exponent = -2.0 * rs / (1.0 - 2.0 * rs);
  return std::pow(total_n, exponent) / machines;
}

/// Rate-optimal k_n with unit constant, rounded and clamped to [1, n-1].
inline std::size_t optimal_kn_dc(std::size_t total_n, std::size_t machines, double rho, double rho_tilde) {
  if (machines == 0 || total_n / machines < 2) throw Error(ErrorKind::Domain, "need at least 2 observations per machine");
  const double rate = optimal_kn_rate(static_cast<double>(total_n), static_cast<double>(machines), rho, rho_tilde);
  const double n = static_cast<double>(total_n / machines);
  return static_cast<std::size_t>(std::clamp(std::round(rate), 1.0, n - 1.0));
}

}  // namespace dhill::theory
