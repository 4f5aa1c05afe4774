#pragma once

// Per-machine statistics.
//
// R^{(α)}_k = (1/k) Σ_{i=1}^{k} (log M^{(i)} - log M^{(k+1)})^α, α = 1, 2, 3,
// and everything a machine derives from them before transmission.

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "dhill/distributions.hpp"
#include "dhill/error.hpp"

namespace dhill {

/// Below this magnitude a rho estimate is treated as zero.
inline constexpr double kRhoEpsilon = 1e-8;

enum class RhoPolicy { Strict, FallbackMinusOne };

inline std::string_view to_string(RhoPolicy p) {
  return p == RhoPolicy::Strict ? "strict" : "fallback";
}

inline RhoPolicy rho_policy_from_string(std::string_view s) {
  if (s == "strict") return RhoPolicy::Strict;
  if (s == "fallback" || s == "fallback_minus_one") return RhoPolicy::FallbackMinusOne;
  throw Error(ErrorKind::Config, "unknown rho policy '" + std::string(s) + "'");
}

/// What a machine may transmit.
enum class TransmissionMode { FiveStat, SixStat, ThreeStat, OneStat };

inline std::string_view to_string(TransmissionMode m) {
  switch (m) {
    case TransmissionMode::FiveStat: return "five";
    case TransmissionMode::SixStat: return "six";
    case TransmissionMode::ThreeStat: return "three";
    case TransmissionMode::OneStat: return "one";
  }
  return "unknown";
}

inline TransmissionMode transmission_mode_from_string(std::string_view s) {
  if (s == "five") return TransmissionMode::FiveStat;
  if (s == "six") return TransmissionMode::SixStat;
  if (s == "three") return TransmissionMode::ThreeStat;
  if (s == "one") return TransmissionMode::OneStat;
  throw Error(ErrorKind::Config, "unknown transmission mode '" + std::string(s) + "'");
}

/// Number of statistics each mode puts on the wire.
constexpr std::size_t statistic_budget(TransmissionMode m) {
  switch (m) {
    case TransmissionMode::FiveStat: return 5;
    case TransmissionMode::SixStat: return 6;
    case TransmissionMode::ThreeStat: return 3;
    case TransmissionMode::OneStat: return 1;
  }
  return 0;
}

struct RStats {
  std::size_t k = 0;
  double r1 = 0.0;
  double r2 = 0.0;
  double r3 = 0.0;

  bool operator==(const RStats&) const = default;
};

namespace detail {

inline void check_k(const Shard& shard, std::size_t k) {
  if (k < 1 || k + 1 > shard.size()) {
    throw Error(ErrorKind::Bounds, "k = " + std::to_string(k) + " outside [1, n-1] for n = " +
                                       std::to_string(shard.size()));
  }
}

}  // namespace detail

/// R^{(1)}, R^{(2)}, R^{(3)} at k in one pass.
inline RStats r_stats(const Shard& shard, std::size_t k) {
  detail::check_k(shard, k);
  // log of the ratio rather than a difference of logs: scaling the data by a
  // power of two then leaves every term bitwise unchanged.
  const auto& desc = shard.sorted_desc();
  const double threshold = desc[k];
  double s1 = 0.0;
  double s2 = 0.0;
  double s3 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = std::log(desc[i] / threshold);
    const double d2 = d * d;
    s1 += d;
    s2 += d2;
    s3 += d2 * d;
  }
  const double kk = static_cast<double>(k);
  return RStats{k, s1 / kk, s2 / kk, s3 / kk};
}

/// A single R^{(α)}_k. Same arithmetic as r_stats, so the values agree bitwise.
inline double r_stat(const Shard& shard, std::size_t k, int alpha) {
  if (alpha < 1 || alpha > 3) throw Error(ErrorKind::Domain, "alpha must be 1, 2 or 3");
  const RStats s = r_stats(shard, k);
  return alpha == 1 ? s.r1 : alpha == 2 ? s.r2 : s.r3;
}

/// Hill estimator on one machine.
inline double local_hill(const Shard& shard, std::size_t k) { return r_stat(shard, k, 1); }

/// T statistic from R-statistics at k_rho. tau = 0 uses the log form.
inline double t_statistic(const RStats& s, double tau) {
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::Domain, "tau must be >= 0");
  if (!(s.r1 > 0.0 && s.r2 > 0.0 && s.r3 > 0.0)) {
    throw Error(ErrorKind::DegenerateT, "T statistic needs positive R-statistics");
  }
  double num = 0.0;
  double den = 0.0;
  if (tau == 0.0) {
    const double a = std::log(s.r1);
    const double b = 0.5 * std::log(s.r2 / 2.0);
    const double c = std::log(s.r3 / 6.0) / 3.0;
    num = a - b;
    den = b - c;
  } else {
    const double a = std::pow(s.r1, tau);
    const double b = std::pow(s.r2 / 2.0, tau / 2.0);
    const double c = std::pow(s.r3 / 6.0, tau / 3.0);
    num = a - b;
    den = b - c;
  }
  if (den == 0.0) throw Error(ErrorKind::DegenerateT, "T statistic denominator is zero");
  const double t = num / den;
  if (!std::isfinite(t)) throw Error(ErrorKind::DegenerateT, "T statistic is not finite");
  return t;
}

/// rho = -3 |(T - 1) / (T - 3)|.
inline double rho_from_t(double t) {
  if (t == 3.0) throw Error(ErrorKind::DegenerateT, "T = 3");
  return -3.0 * std::fabs((t - 1.0) / (t - 3.0));
}

/// A rho estimate plus whether the policy replaced it.
struct RhoEstimate {
  double value = -1.0;
  bool fallback = false;
};

/// rho from R-statistics at k_rho. Strict propagates DegenerateT; the
/// fallback policy substitutes -1 for a degenerate T or |rho| < epsilon.
inline RhoEstimate estimate_rho(const RStats& at_krho, double tau, RhoPolicy policy) {
  try {
    const double rho = rho_from_t(t_statistic(at_krho, tau));
    if (policy == RhoPolicy::FallbackMinusOne && rho > -kRhoEpsilon) return {-1.0, true};
    return {rho, false};
  } catch (const Error& e) {
    if (policy == RhoPolicy::FallbackMinusOne && e.is_degenerate()) return {-1.0, true};
    throw;
  }
}

inline double local_t_statistic(const RStats& stats_krho, double tau) { return t_statistic(stats_krho, tau); }

inline double local_rho(const Shard& shard, std::size_t k_rho, double tau, RhoPolicy policy = RhoPolicy::Strict) {
  return estimate_rho(r_stats(shard, k_rho), tau, policy).value;
}

/// r1 - (r2 - 2 r1^2) / (2 r1 rho / (1 - rho)).
///
/// Shared by every bias-corrected estimator so that all routes agree bitwise.
inline double bias_corrected_gamma(double r1, double r2, double rho) {
  if (!(rho < 0.0)) throw Error(ErrorKind::RhoDegenerate, "rho estimate must be negative");
  if (!(r1 > 0.0)) throw Error(ErrorKind::Domain, "R^(1) at k_n must be positive");
  const double numerator = r2 - 2.0 * r1 * r1;
  const double denominator = 2.0 * r1 * rho / (1.0 - rho);
  return r1 - numerator / denominator;
}

/// Applies the rho policy to an estimate that is about to be plugged into the
/// bias correction.
inline RhoEstimate guard_rho(RhoEstimate rho, RhoPolicy policy) {
  if (rho.value > -kRhoEpsilon) {
    if (policy == RhoPolicy::Strict) {
      throw Error(ErrorKind::RhoDegenerate, "rho estimate is within epsilon of zero");
    }
    return {-1.0, true};
  }
  return rho;
}

/// One machine's own bias-corrected estimate.
inline double local_bias_corrected(const Shard& shard, std::size_t k_n, std::size_t k_rho, double tau,
                                   RhoPolicy policy = RhoPolicy::Strict) {
  const RStats at_kn = r_stats(shard, k_n);
  const RhoEstimate rho = guard_rho(estimate_rho(r_stats(shard, k_rho), tau, policy), policy);
  return bias_corrected_gamma(at_kn.r1, at_kn.r2, rho.value);
}

/// The payload a machine transmits. Only the fields of `mode` are set.
struct WorkerSummary {
  int machine_id = 0;
  std::size_t n = 0;
  std::size_t k_n = 0;
  std::size_t k_rho = 0;
  TransmissionMode mode = TransmissionMode::FiveStat;

  std::optional<double> r1_kn;
  std::optional<double> r2_kn;
  std::optional<double> r1_krho;
  std::optional<double> r2_krho;
  std::optional<double> r3_krho;
  std::optional<double> threshold;
  std::optional<double> local_rho;
  std::optional<double> local_gamma;

  bool operator==(const WorkerSummary&) const = default;

  /// Number of statistic fields present.
  std::size_t statistic_count() const {
    std::size_t c = 0;
    for (const auto* f : {&r1_kn, &r2_kn, &r1_krho, &r2_krho, &r3_krho, &threshold, &local_rho, &local_gamma}) {
      c += f->has_value() ? 1 : 0;
    }
    return c;
  }

  /// True when exactly the fields belonging to `mode` are present.
  bool matches_mode() const {
    const bool kn = r1_kn && r2_kn;
    const bool krho = r1_krho && r2_krho && r3_krho;
    switch (mode) {
      case TransmissionMode::FiveStat:
        return kn && krho && statistic_count() == 5;
      case TransmissionMode::SixStat:
        return kn && krho && threshold && statistic_count() == 6;
      case TransmissionMode::ThreeStat:
        return kn && local_rho && statistic_count() == 3;
      case TransmissionMode::OneStat:
        return local_gamma && statistic_count() == 1;
    }
    return false;
  }
};

inline WorkerSummary make_summary(const Shard& shard, std::size_t k_n, std::size_t k_rho, double tau,
                                  TransmissionMode mode, RhoPolicy policy = RhoPolicy::Strict) {
  if (!(k_n < k_rho)) throw Error(ErrorKind::Bounds, "k_n must be smaller than k_rho");
  if (k_rho + 1 > shard.size()) {
    throw Error(ErrorKind::Bounds, "k_rho = " + std::to_string(k_rho) + " needs n_j > k_rho, n_j = " +
                                       std::to_string(shard.size()));
  }
  WorkerSummary s;
  s.machine_id = shard.machine_id();
  s.n = shard.size();
  s.k_n = k_n;
  s.k_rho = k_rho;
  s.mode = mode;

  const RStats at_kn = r_stats(shard, k_n);
  const RStats at_krho = r_stats(shard, k_rho);
  switch (mode) {
    case TransmissionMode::SixStat:
      s.threshold = shard.order_statistic(k_n + 1);
      [[fallthrough]];
    case TransmissionMode::FiveStat:
      s.r1_kn = at_kn.r1;
      s.r2_kn = at_kn.r2;
      s.r1_krho = at_krho.r1;
      s.r2_krho = at_krho.r2;
      s.r3_krho = at_krho.r3;
      break;
    case TransmissionMode::ThreeStat:
      s.local_rho = estimate_rho(at_krho, tau, policy).value;
      s.r1_kn = at_kn.r1;
      s.r2_kn = at_kn.r2;
      break;
    case TransmissionMode::OneStat: {
      const RhoEstimate rho = guard_rho(estimate_rho(at_krho, tau, policy), policy);
      s.local_gamma = bias_corrected_gamma(at_kn.r1, at_kn.r2, rho.value);
      break;
    }
  }
  return s;
}

}  // namespace dhill
