#include <gtest/gtest.h>

#include <cmath>

#include "dhill/special.hpp"

using dhill::special::log_gamma;
using dhill::special::log_gamma_ratio;
using dhill::special::log_gamma_ratio_scaled;

namespace {

// 40-digit reference values (mpmath loggamma).
struct Ref {
  double x;
  double lg;
};
constexpr Ref kRefs[] = {
    {0.5, 0.57236494292470008707},   {2.5, 0.28468287047291915963},      {7.0, 6.5792512120101009951},
    {14.9, 24.924132002217277353},   {15.0, 25.1912211827386815},        {100.25, 360.28455963776423497},
    {1e6, 12815504.56914761166},     {1e12, 26631021115915.651636},
};

}  // namespace

TEST(LogGamma, MatchesHighPrecisionReference) {
  for (const auto& r : kRefs) {
    EXPECT_NEAR(log_gamma(r.x), r.lg, 1e-13 * std::fabs(r.lg)) << "x=" << r.x;
  }
}

TEST(LogGamma, ZeroAtOneAndTwo) {
  EXPECT_NEAR(log_gamma(1.0), 0.0, 1e-14);
  EXPECT_NEAR(log_gamma(2.0), 0.0, 1e-14);
}

TEST(LogGamma, FactorialsExact) {
  double f = 1.0;
  for (int n = 1; n <= 25; ++n) {
    f *= n;
    EXPECT_NEAR(log_gamma(n + 1.0), std::log(f), 1e-13 * std::max(1.0, std::log(f))) << n;
  }
}

TEST(LogGamma, Recurrence) {
  for (double x = 0.05; x < 60.0; x *= 1.37) {
    const double lhs = log_gamma(x + 1.0);
    const double rhs = log_gamma(x) + std::log(x);
    EXPECT_NEAR(lhs, rhs, 1e-13 * std::max(1.0, std::fabs(lhs))) << x;
  }
}

TEST(LogGamma, AgreesWithStdLgamma) {
  for (double x = 0.01; x < 1e8; x *= 3.1) {
    EXPECT_NEAR(log_gamma(x), std::lgamma(x), 1e-12 * std::max(1.0, std::fabs(std::lgamma(x)))) << x;
  }
}

TEST(LogGamma, RejectsNonPositive) {
  EXPECT_THROW(log_gamma(0.0), dhill::Error);
  EXPECT_THROW(log_gamma(-1.5), dhill::Error);
  EXPECT_THROW(log_gamma(std::nan("")), dhill::Error);
}

TEST(LogGammaRatio, MatchesDifferenceAtModerateArguments) {
  for (double x : {0.3, 1.0, 4.5, 14.0, 16.0, 80.0}) {
    for (double a : {0.0, 0.25, 1.0, 2.5, 7.0}) {
      EXPECT_NEAR(log_gamma_ratio(x, a), log_gamma(x + a) - log_gamma(x), 2e-13 * std::max(1.0, log_gamma(x + a)))
          << x << " " << a;
    }
  }
}

TEST(LogGammaRatio, IntegerShiftIsLogOfPochhammer) {
  // Γ(x+3)/Γ(x) = x(x+1)(x+2)
  for (double x : {1e3, 1e6, 1e9, 1e12}) {
    const double expected = std::log1p(1.0 / x) + std::log1p(2.0 / x);
    EXPECT_NEAR(log_gamma_ratio_scaled(x, 3.0), expected, 1e-16 + 1e-12 * std::fabs(expected)) << x;
  }
}

// What g(k, n, rho) needs is a small absolute error on the scaled log-ratio.
TEST(LogGammaRatio, ScaledFormIsSmallForLargeArgument) {
  // L(x, a) = a(a-1)/(2x) + O(x^-2)
  for (double x : {1e6, 1e9, 1e12}) {
    for (double a : {0.5, 2.0, 50.0}) {
      EXPECT_NEAR(log_gamma_ratio_scaled(x, a), a * (a - 1.0) / (2.0 * x), 1e-16 + 2.0 * a * a * a / (x * x))
          << x << " " << a;
    }
  }
}
