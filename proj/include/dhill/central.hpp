#pragma once

// Central-machine aggregation and the distributed estimators built on it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dhill/error.hpp"
#include "dhill/worker.hpp"

namespace dhill {

enum class Weighting { EqualMean, SizeWeighted };

inline std::string_view to_string(Weighting w) { return w == Weighting::EqualMean ? "equal" : "size"; }

inline Weighting weighting_from_string(std::string_view s) {
  if (s == "equal") return Weighting::EqualMean;
  if (s == "size") return Weighting::SizeWeighted;
  throw Error(ErrorKind::Config, "unknown weighting '" + std::string(s) + "'");
}

/// Compensated running sum.
class KahanSum {
 public:
  void add(double x) noexcept {
    const double y = x - compensation_;
    const double t = sum_ + y;
    compensation_ = (t - sum_) - y;
    sum_ = t;
  }
  double value() const noexcept { return sum_; }

 private:
  double sum_ = 0.0;
  double compensation_ = 0.0;
};

struct PooledStats {
  TransmissionMode mode = TransmissionMode::FiveStat;
  Weighting weights_used = Weighting::EqualMean;
  std::size_t machines = 0;
  std::size_t total_n = 0;
  std::size_t k_n = 0;
  std::size_t k_rho = 0;

  std::optional<double> r1_kn;
  std::optional<double> r2_kn;
  std::optional<double> r1_krho;
  std::optional<double> r2_krho;
  std::optional<double> r3_krho;
  std::optional<double> mean_threshold;
  std::optional<double> mean_local_rho;
  std::optional<double> mean_local_gamma;

  bool operator==(const PooledStats&) const = default;

  /// n = N / m, the per-machine size used by the quantile extrapolation.
  double per_machine_n() const { return static_cast<double>(total_n) / static_cast<double>(machines); }

  RStats krho_stats() const {
    if (!(r1_krho && r2_krho && r3_krho)) throw Error(ErrorKind::Mode, "pooled stats carry no k_rho moments");
    return RStats{k_rho, *r1_krho, *r2_krho, *r3_krho};
  }
};

/// Field-wise mean of worker summaries, summed in machine_id order.
inline PooledStats aggregate(std::span<const WorkerSummary> summaries, Weighting weighting) {
  if (summaries.empty()) throw Error(ErrorKind::Arity, "no worker summaries to aggregate");

  std::vector<const WorkerSummary*> ordered;
  ordered.reserve(summaries.size());
  for (const auto& s : summaries) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const WorkerSummary* a, const WorkerSummary* b) { return a->machine_id < b->machine_id; });

  const WorkerSummary& first = *ordered.front();
  std::size_t total_n = 0;
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    const WorkerSummary& s = *ordered[i];
    if (i > 0 && s.machine_id == ordered[i - 1]->machine_id) {
      throw Error(ErrorKind::Protocol, "duplicate machine_id " + std::to_string(s.machine_id));
    }
    if (s.mode != first.mode || s.k_n != first.k_n || s.k_rho != first.k_rho) {
      throw Error(ErrorKind::Protocol, "summaries disagree on mode, k_n or k_rho");
    }
    if (!s.matches_mode()) {
      throw Error(ErrorKind::BudgetViolation, "summary fields do not match mode " + std::string(to_string(s.mode)));
    }
    if (weighting == Weighting::SizeWeighted && s.n == 0) {
      throw Error(ErrorKind::Config, "size weighting needs n_j on every summary");
    }
    total_n += s.n;
  }

  const double m = static_cast<double>(ordered.size());
  auto pool = [&](std::optional<double> WorkerSummary::*field) -> std::optional<double> {
    if (!(first.*field)) return std::nullopt;
    KahanSum sum;
    for (const WorkerSummary* s : ordered) {
      const double x = *(s->*field);
      if (weighting == Weighting::EqualMean) {
        sum.add(x);
      } else {
        sum.add(static_cast<double>(s->n) / static_cast<double>(total_n) * x);
      }
    }
    return weighting == Weighting::EqualMean ? sum.value() / m : sum.value();
  };

  PooledStats p;
  p.mode = first.mode;
  p.weights_used = weighting;
  p.machines = ordered.size();
  p.total_n = total_n;
  p.k_n = first.k_n;
  p.k_rho = first.k_rho;
  p.r1_kn = pool(&WorkerSummary::r1_kn);
  p.r2_kn = pool(&WorkerSummary::r2_kn);
  p.r1_krho = pool(&WorkerSummary::r1_krho);
  p.r2_krho = pool(&WorkerSummary::r2_krho);
  p.r3_krho = pool(&WorkerSummary::r3_krho);
  p.mean_threshold = pool(&WorkerSummary::threshold);
  p.mean_local_rho = pool(&WorkerSummary::local_rho);
  p.mean_local_gamma = pool(&WorkerSummary::local_gamma);
  return p;
}

inline RhoEstimate pooled_rho_estimate(const PooledStats& pooled, double tau, RhoPolicy policy) {
  return estimate_rho(pooled.krho_stats(), tau, policy);
}

/// rho from the pooled k_rho moments.
inline double pooled_rho(const PooledStats& pooled, double tau, RhoPolicy policy = RhoPolicy::Strict) {
  return pooled_rho_estimate(pooled, tau, policy).value;
}

/// Average of the machines' Hill estimates at k_n.
inline double distributed_hill(const PooledStats& pooled) {
  if (!pooled.r1_kn) throw Error(ErrorKind::Mode, "distributed Hill needs R^(1) at k_n (not sent in one-stat mode)");
  return *pooled.r1_kn;
}

/// Bias-corrected estimator on pooled moments (five/six-stat transmission).
inline double gamma_unbiased(const PooledStats& pooled, double rho_hat) {
  if (!(pooled.r1_kn && pooled.r2_kn)) throw Error(ErrorKind::Mode, "pooled stats carry no k_n moments");
  return bias_corrected_gamma(*pooled.r1_kn, *pooled.r2_kn, rho_hat);
}

/// Three-stat variant: the correction uses the mean of the local rho estimates.
inline double gamma_unbiased_v2(const PooledStats& pooled, RhoPolicy policy = RhoPolicy::Strict) {
  if (!pooled.mean_local_rho) throw Error(ErrorKind::Mode, "three-stat estimator needs local rho estimates");
  const RhoEstimate rho = guard_rho({*pooled.mean_local_rho, false}, policy);
  return gamma_unbiased(pooled, rho.value);
}

/// One-stat variant: mean of the machines' own bias-corrected estimates.
inline double gamma_unbiased_v3(const PooledStats& pooled) {
  if (!pooled.mean_local_gamma) throw Error(ErrorKind::Mode, "one-stat estimator needs local estimates");
  return *pooled.mean_local_gamma;
}

/// Which second-moment combination drives the quantile bias factor.
///
/// AsPublished uses R2 - R1^2. Consistent uses R2 - 2 R1^2, the combination
/// whose limit is 2 gamma A rho / (1 - rho)^2 and which therefore vanishes for
/// an exact power law.
enum class QuantileCorrection { AsPublished, Consistent };

/// 1 - (R2 - c R1^2)(1 - rho)^2 / (2 R1 rho^2), c = 1 (AsPublished) or 2.
inline double quantile_correction_factor(const PooledStats& pooled, double rho_hat,
                                         QuantileCorrection form = QuantileCorrection::AsPublished) {
  if (!(pooled.r1_kn && pooled.r2_kn)) throw Error(ErrorKind::Mode, "pooled stats carry no k_n moments");
  if (!(rho_hat < 0.0)) throw Error(ErrorKind::RhoDegenerate, "rho estimate must be negative");
  const double r1 = *pooled.r1_kn;
  const double r2 = *pooled.r2_kn;
  const double c = form == QuantileCorrection::AsPublished ? 1.0 : 2.0;
  const double one_minus_rho = 1.0 - rho_hat;
  return 1.0 - (r2 - c * r1 * r1) * one_minus_rho * one_minus_rho / (2.0 * r1 * rho_hat * rho_hat);
}

/// High quantile U(1/p_N) extrapolated from the mean threshold M^{(k_n+1)}.
inline double quantile_estimate(const PooledStats& pooled, double rho_hat, double gamma_hat, std::size_t k_n,
                                double n, double p_N,
                                QuantileCorrection form = QuantileCorrection::AsPublished) {
  if (!pooled.mean_threshold) throw Error(ErrorKind::Mode, "quantile estimate needs thresholds (six-stat mode)");
  const double kk = static_cast<double>(k_n);
  if (!(p_N > 0.0 && p_N < kk / n)) throw Error(ErrorKind::Domain, "p_N must lie in (0, k_n / n)");
  const double factor = quantile_correction_factor(pooled, rho_hat, form);
  return *pooled.mean_threshold * std::pow(kk / (n * p_N), gamma_hat) * factor;
}

struct EstimatorConfig {
  std::size_t k_n = 0;
  std::size_t k_rho = 0;
  double tau = 0.0;
  TransmissionMode mode = TransmissionMode::FiveStat;
  RhoPolicy rho_policy = RhoPolicy::Strict;
  Weighting weighting = Weighting::EqualMean;
  QuantileCorrection quantile_form = QuantileCorrection::AsPublished;

  void validate() const {
    if (k_n < 1) throw Error(ErrorKind::Config, "k_n must be positive");
    if (!(k_n < k_rho)) throw Error(ErrorKind::Config, "k_n must be smaller than k_rho");
    if (!(tau >= 0.0) || !std::isfinite(tau)) throw Error(ErrorKind::Config, "tau must be >= 0");
  }
};

enum class EstimatorVariant { Unbiased, V2, V3 };

inline std::string_view to_string(EstimatorVariant v) {
  switch (v) {
    case EstimatorVariant::Unbiased: return "unbiased";
    case EstimatorVariant::V2: return "v2";
    case EstimatorVariant::V3: return "v3";
  }
  return "unknown";
}

struct EstimateReport {
  std::optional<double> gamma_dh;
  std::optional<double> rho_hat;
  double gamma_unbiased = 0.0;
  EstimatorVariant variant = EstimatorVariant::Unbiased;
  std::optional<double> quantile;
  std::vector<std::string> diagnostics;

  bool operator==(const EstimateReport&) const = default;
};

inline constexpr std::string_view kDiagTauAboveOne = "tau_above_recommended_range";
inline constexpr std::string_view kDiagRhoFallback = "rho_fallback_applied";
inline constexpr std::string_view kDiagQuantileNonpositive = "quantile_correction_nonpositive";

/// Aggregate, estimate rho, then the gamma estimator of the transmission mode
/// and, if p_N is given, the high quantile.
inline EstimateReport estimate(std::span<const WorkerSummary> summaries, const EstimatorConfig& config,
                               std::optional<double> p_N = std::nullopt) {
  config.validate();
  for (const auto& s : summaries) {
    if (s.mode != config.mode || s.k_n != config.k_n || s.k_rho != config.k_rho) {
      throw Error(ErrorKind::Protocol, "summary from machine " + std::to_string(s.machine_id) +
                                           " does not match the estimator configuration");
    }
  }
  EstimateReport report;
  if (config.tau > 1.0) report.diagnostics.emplace_back(kDiagTauAboveOne);

  const PooledStats pooled = aggregate(summaries, config.weighting);
  switch (config.mode) {
    case TransmissionMode::FiveStat:
    case TransmissionMode::SixStat: {
      RhoEstimate rho = pooled_rho_estimate(pooled, config.tau, config.rho_policy);
      rho = rho.fallback ? rho : guard_rho(rho, config.rho_policy);
      if (rho.fallback) report.diagnostics.emplace_back(kDiagRhoFallback);
      report.gamma_dh = distributed_hill(pooled);
      report.rho_hat = rho.value;
      report.gamma_unbiased = gamma_unbiased(pooled, rho.value);
      report.variant = EstimatorVariant::Unbiased;
      break;
    }
    case TransmissionMode::ThreeStat: {
      const RhoEstimate rho = guard_rho({*pooled.mean_local_rho, false}, config.rho_policy);
      if (rho.fallback) report.diagnostics.emplace_back(kDiagRhoFallback);
      report.gamma_dh = distributed_hill(pooled);
      report.rho_hat = rho.value;
      report.gamma_unbiased = gamma_unbiased(pooled, rho.value);
      report.variant = EstimatorVariant::V2;
      break;
    }
    case TransmissionMode::OneStat:
      report.gamma_unbiased = gamma_unbiased_v3(pooled);
      report.variant = EstimatorVariant::V3;
      break;
  }

  if (p_N) {
    if (config.mode != TransmissionMode::SixStat) {
      throw Error(ErrorKind::Mode, "quantile estimation needs six-stat transmission");
    }
    const double factor = quantile_correction_factor(pooled, *report.rho_hat, config.quantile_form);
    if (!(factor > 0.0)) report.diagnostics.emplace_back(kDiagQuantileNonpositive);
    report.quantile = quantile_estimate(pooled, *report.rho_hat, report.gamma_unbiased, config.k_n,
                                        pooled.per_machine_n(), *p_N, config.quantile_form);
  }
  return report;
}

}  // namespace dhill
