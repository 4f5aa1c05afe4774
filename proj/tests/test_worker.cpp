#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dhill/worker.hpp"

using namespace dhill;

namespace {

Shard e_shard() { return Shard(1, {std::exp(3.0), std::exp(2.0), std::exp(1.0), 1.0}); }

Shard pareto_shard(std::size_t n, std::uint64_t seed, int id = 1) {
  Xoshiro256 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = pareto1_from_uniform(rng.uniform());
  return Shard(id, std::move(v));
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::Session;
}

}  // namespace

TEST(RStat, LogExcessMoments) {
  const Shard s = e_shard();
  EXPECT_NEAR(r_stat(s, 2, 1), 1.5, 1e-15);
  EXPECT_NEAR(r_stat(s, 2, 2), 2.5, 1e-15);
  EXPECT_NEAR(r_stat(s, 2, 3), 4.5, 1e-14);
  const RStats r = r_stats(s, 2);
  EXPECT_EQ(r.k, 2u);
  EXPECT_EQ(r.r1, r_stat(s, 2, 1));
}

TEST(RStat, Bounds) {
  const Shard s = e_shard();
  EXPECT_EQ(kind_of([&] { r_stat(s, 0, 1); }), ErrorKind::Bounds);
  EXPECT_EQ(kind_of([&] { r_stat(s, 4, 1); }), ErrorKind::Bounds);
  EXPECT_TRUE(std::isfinite(r_stat(s, 3, 1)));  // threshold is the minimum
}

TEST(RStat, TiesGiveZero) {
  const Shard s(1, {5.0, 5.0, 5.0});
  EXPECT_EQ(r_stat(s, 2, 1), 0.0);
  EXPECT_EQ(r_stat(s, 2, 3), 0.0);
}

TEST(LocalHill, ValuesAndScale) {
  EXPECT_NEAR(local_hill(e_shard(), 2), 1.5, 1e-15);
  EXPECT_DOUBLE_EQ(local_hill(e_shard().scaled(7.3), 2), 1.5);
}

TEST(LocalHill, ParetoConsistency) {
  const Shard s = pareto_shard(100000, 11);
  EXPECT_NEAR(local_hill(s, 1000), 1.0, 3.0 / std::sqrt(1000.0));
}

// Renyi: k * Hill is a Gamma(k, 1) sum for Pareto(1) data, so E = 1 at every k.
TEST(LocalHill, UnbiasedOnExactParetoTail) {
  const int reps = 10000;
  const std::size_t k = 5;
  double sum = 0.0;
  double sum2 = 0.0;
  for (int r = 0; r < reps; ++r) {
    const double h = local_hill(pareto_shard(20, substream_seed(3, r, 0)), k);
    sum += h;
    sum2 += h * h;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum2 / reps - mean * mean) / reps);
  EXPECT_NEAR(mean, 1.0, 4.0 * se);
}

TEST(TStatistic, ZeroNumerator) {
  // (1, 2, 12): r1 = (r2/2)^(1/2) = 1, (r3/6)^(1/3) = 2^(1/3).
  EXPECT_EQ(t_statistic({1, 1.0, 2.0, 12.0}, 1.0), 0.0);
  EXPECT_EQ(t_statistic({1, 1.0, 2.0, 12.0}, 0.0), 0.0);
}

TEST(TStatistic, ExponentialMomentsAreDegenerate) {
  // gamma, 2 gamma^2, 6 gamma^3 make numerator and denominator both vanish.
  EXPECT_EQ(kind_of([] { t_statistic({1, 2.0, 8.0, 48.0}, 1.0); }), ErrorKind::DegenerateT);
  EXPECT_EQ(kind_of([] { t_statistic({1, 2.0, 8.0, 48.0}, 0.0); }), ErrorKind::DegenerateT);
}

TEST(TStatistic, HandEvaluation) {
  // r2 = 2 r1^2 zeroes the numerator; perturb r3 to keep the denominator alive.
  const double r1 = 1.3, r2 = 2.0 * r1 * r1, r3 = 11.0, tau = 0.5;
  const double b = std::pow(r2 / 2.0, tau / 2.0);
  const double c = std::pow(r3 / 6.0, tau / 3.0);
  EXPECT_NEAR(t_statistic({1, r1, r2, r3}, tau), (std::pow(r1, tau) - b) / (b - c), 1e-15);
  // A generic point, against long-double arithmetic.
  const long double R1 = 0.9L, R2 = 1.9L, R3 = 6.1L, T = 0.7L;
  const long double B = std::pow(R2 / 2, T / 2), C = std::pow(R3 / 6, T / 3);
  const double expected = static_cast<double>((std::pow(R1, T) - B) / (B - C));
  EXPECT_NEAR(t_statistic({1, 0.9, 1.9, 6.1}, 0.7), expected, 1e-12 * std::fabs(expected));
}

TEST(TStatistic, LogFormIsTheLimitOfSmallTau) {
  const RStats s{1, 1.1, 2.7, 9.5};
  EXPECT_NEAR(t_statistic(s, 1e-7), t_statistic(s, 0.0), 1e-6);
}

TEST(TStatistic, Errors) {
  EXPECT_EQ(kind_of([] { t_statistic({1, 0.0, 2.0, 12.0}, 1.0); }), ErrorKind::DegenerateT);
  EXPECT_EQ(kind_of([] { t_statistic({1, 1.0, 2.0, 12.0}, -0.5); }), ErrorKind::Domain);
}

TEST(RhoFromT, MapValues) {
  EXPECT_EQ(rho_from_t(0.0), -1.0);
  EXPECT_EQ(rho_from_t(1.5), -1.0);
  EXPECT_EQ(rho_from_t(2.0), -3.0);
  EXPECT_EQ(rho_from_t(1.0), 0.0);
  EXPECT_EQ(kind_of([] { rho_from_t(3.0); }), ErrorKind::DegenerateT);
  // T(rho) = 3(rho - 1)/(rho - 3) is inverted on rho < 0.
  for (double rho : {-0.25, -0.5, -1.0, -2.0, -7.0}) {
    EXPECT_NEAR(rho_from_t(3.0 * (rho - 1.0) / (rho - 3.0)), rho, 1e-14);
  }
}

TEST(RhoPolicyTest, FallbackReplacesDegenerateT) {
  const RStats degenerate{1, 2.0, 8.0, 48.0};
  EXPECT_EQ(kind_of([&] { estimate_rho(degenerate, 1.0, RhoPolicy::Strict); }), ErrorKind::DegenerateT);
  const RhoEstimate fb = estimate_rho(degenerate, 1.0, RhoPolicy::FallbackMinusOne);
  EXPECT_EQ(fb.value, -1.0);
  EXPECT_TRUE(fb.fallback);
}

TEST(RhoPolicyTest, GuardNearZero) {
  EXPECT_EQ(kind_of([] { guard_rho({-1e-9, false}, RhoPolicy::Strict); }), ErrorKind::RhoDegenerate);
  EXPECT_EQ(guard_rho({-1e-9, false}, RhoPolicy::FallbackMinusOne).value, -1.0);
  EXPECT_EQ(guard_rho({-0.3, false}, RhoPolicy::Strict).value, -0.3);
}

TEST(LocalRho, AlwaysNonPositive) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const Shard s = pareto_shard(300, seed);
    for (double tau : {0.0, 0.5, 1.0}) {
      try {
        EXPECT_LE(local_rho(s, 250, tau), 0.0);
      } catch (const Error& e) {
        EXPECT_TRUE(e.is_degenerate());
      }
    }
  }
}

TEST(BiasCorrected, HandValues) {
  EXPECT_EQ(bias_corrected_gamma(1.0, 2.0, -1.0), 1.0);
  EXPECT_NEAR(bias_corrected_gamma(1.1, 2.6, -1.0), 1.1 + 0.18 / 1.1, 1e-15);
  EXPECT_NEAR(bias_corrected_gamma(1.1, 2.6, -1.0), 1.2636363636363636, 1e-15);
  for (double g : {0.2, 1.0, 3.5}) {
    for (double rho : {-0.1, -1.0, -4.0}) EXPECT_NEAR(bias_corrected_gamma(g, 2.0 * g * g, rho), g, 1e-15 * g);
  }
  EXPECT_EQ(kind_of([] { bias_corrected_gamma(1.0, 2.0, 0.0); }), ErrorKind::RhoDegenerate);
  EXPECT_EQ(kind_of([] { bias_corrected_gamma(0.0, 2.0, -1.0); }), ErrorKind::Domain);
}

TEST(BiasCorrected, LocalMatchesFormula) {
  const Shard s = pareto_shard(2000, 5);
  const RStats kn = r_stats(s, 100);
  const double rho = local_rho(s, 1500, 0.5);
  EXPECT_EQ(local_bias_corrected(s, 100, 1500, 0.5), bias_corrected_gamma(kn.r1, kn.r2, rho));
}

TEST(Summary, PayloadSizes) {
  const Shard s = pareto_shard(1000, 8, 3);
  const auto five = make_summary(s, 50, 900, 0.0, TransmissionMode::FiveStat);
  const auto six = make_summary(s, 50, 900, 0.0, TransmissionMode::SixStat);
  const auto three = make_summary(s, 50, 900, 0.0, TransmissionMode::ThreeStat);
  const auto one = make_summary(s, 50, 900, 0.0, TransmissionMode::OneStat);
  EXPECT_EQ(five.statistic_count(), 5u);
  EXPECT_EQ(six.statistic_count(), 6u);
  EXPECT_EQ(three.statistic_count(), 3u);
  EXPECT_EQ(one.statistic_count(), 1u);
  for (const auto* x : {&five, &six, &three, &one}) {
    EXPECT_TRUE(x->matches_mode());
    EXPECT_EQ(x->statistic_count(), statistic_budget(x->mode));
    EXPECT_EQ(x->machine_id, 3);
    EXPECT_EQ(x->n, 1000u);
  }
  EXPECT_EQ(*six.threshold, s.order_statistic(51));
  EXPECT_EQ(*five.r1_kn, r_stat(s, 50, 1));
  EXPECT_EQ(*five.r3_krho, r_stat(s, 900, 3));
  EXPECT_EQ(*three.local_rho, local_rho(s, 900, 0.0));
  EXPECT_EQ(*one.local_gamma, local_bias_corrected(s, 50, 900, 0.0));
}

TEST(Summary, Preconditions) {
  const Shard s = pareto_shard(100, 1);
  EXPECT_EQ(kind_of([&] { make_summary(s, 50, 50, 0.0, TransmissionMode::FiveStat); }), ErrorKind::Bounds);
  EXPECT_EQ(kind_of([&] { make_summary(s, 10, 100, 0.0, TransmissionMode::FiveStat); }), ErrorKind::Bounds);
  EXPECT_NO_THROW(make_summary(s, 10, 99, 0.0, TransmissionMode::FiveStat));
}

TEST(Summary, ModeStrings) {
  for (auto m : {TransmissionMode::FiveStat, TransmissionMode::SixStat, TransmissionMode::ThreeStat,
                 TransmissionMode::OneStat}) {
    EXPECT_EQ(transmission_mode_from_string(to_string(m)), m);
  }
  EXPECT_THROW(transmission_mode_from_string("seven"), Error);
  EXPECT_EQ(rho_policy_from_string("fallback"), RhoPolicy::FallbackMinusOne);
}
