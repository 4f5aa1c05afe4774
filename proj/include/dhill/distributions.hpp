#pragma once

// Heavy-tailed sample generation.
//
// Every built-in distribution is sampled as U(Y) with Y Pareto(1) and
// U(t) = F^{-1}(1 - 1/t) the tail quantile function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dhill/error.hpp"
#include "dhill/rng.hpp"

namespace dhill {

enum class DistributionName { Frechet, Burr, AbsCauchy, UserQuantile };

inline std::string_view to_string(DistributionName name) {
  switch (name) {
    case DistributionName::Frechet: return "Frechet";
    case DistributionName::Burr: return "Burr";
    case DistributionName::AbsCauchy: return "AbsCauchy";
    case DistributionName::UserQuantile: return "UserQuantile";
  }
  return "unknown";
}

inline DistributionName distribution_from_string(std::string_view s) {
  if (s == "Frechet" || s == "frechet") return DistributionName::Frechet;
  if (s == "Burr" || s == "burr") return DistributionName::Burr;
  if (s == "AbsCauchy" || s == "abscauchy" || s == "abs-cauchy" || s == "abs_cauchy") return DistributionName::AbsCauchy;
  throw Error(ErrorKind::Lookup, "unknown distribution '" + std::string(s) + "'");
}

/// First, second and third order indices of a tail.
struct TailIndices {
  double gamma;
  double rho;
  double rho_tilde;

  bool operator==(const TailIndices&) const = default;
};

/// Indices of the three study distributions.
inline TailIndices table1_params(DistributionName name) {
  switch (name) {
    case DistributionName::Frechet: return {1.0, -1.0, -1.0};
    case DistributionName::Burr: return {1.0, -0.5, -0.5};
    case DistributionName::AbsCauchy: return {1.0, -2.0, -4.0};
    case DistributionName::UserQuantile: break;
  }
  throw Error(ErrorKind::Lookup, "no tabulated indices for " + std::string(to_string(name)));
}

/// Tabulated U(t) with piecewise-linear interpolation in (log t, log U).
/// The end segments are extended as power laws outside the grid.
class TabulatedQuantile {
 public:
  TabulatedQuantile(std::vector<double> t, std::vector<double> u) {
    if (t.size() != u.size() || t.size() < 2) {
      throw Error(ErrorKind::Domain, "tabulated quantile needs >= 2 matching (t, U) pairs");
    }
    log_t_.reserve(t.size());
    log_u_.reserve(u.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (!(t[i] > 1.0) || !(u[i] > 0.0) || !std::isfinite(t[i]) || !std::isfinite(u[i])) {
        throw Error(ErrorKind::Domain, "tabulated quantile needs t > 1 and U(t) > 0");
      }
      if (i > 0 && !(t[i] > t[i - 1] && u[i] > u[i - 1])) {
        throw Error(ErrorKind::Domain, "tabulated quantile must be strictly increasing");
      }
      log_t_.push_back(std::log(t[i]));
      log_u_.push_back(std::log(u[i]));
    }
  }

  double operator()(double t) const {
    const double lt = std::log(t);
    auto it = std::upper_bound(log_t_.begin(), log_t_.end(), lt);
    std::size_t hi = static_cast<std::size_t>(it - log_t_.begin());
    hi = std::clamp<std::size_t>(hi, 1, log_t_.size() - 1);
    const std::size_t lo = hi - 1;
    const double slope = (log_u_[hi] - log_u_[lo]) / (log_t_[hi] - log_t_[lo]);
    return std::exp(log_u_[lo] + slope * (lt - log_t_[lo]));
  }

 private:
  std::vector<double> log_t_;
  std::vector<double> log_u_;
};

/// A tail model: name, indices and the tail quantile function U.
struct TailDistribution {
  DistributionName name = DistributionName::Frechet;
  TailIndices indices{1.0, -1.0, -1.0};
  // Only used by UserQuantile.
  std::function<double(double)> user_quantile;

  static TailDistribution builtin(DistributionName name) {
    return TailDistribution{name, table1_params(name), {}};
  }

  static TailDistribution from_table(TabulatedQuantile table, TailIndices indices) {
    return TailDistribution{DistributionName::UserQuantile, indices,
                            [table = std::move(table)](double t) { return table(t); }};
  }

  std::string_view label() const { return to_string(name); }
};

/// Pareto(1) draw from a uniform on [0, 1).
inline double pareto1_from_uniform(double u) {
  if (!(u >= 0.0 && u < 1.0)) throw Error(ErrorKind::Domain, "uniform must lie in [0, 1)");
  return 1.0 / (1.0 - u);
}

/// U(t) = F^{-1}(1 - 1/t), t > 1.
inline double tail_quantile(const TailDistribution& dist, double t) {
  if (!(t > 1.0) || std::isnan(t)) throw Error(ErrorKind::Domain, "tail_quantile requires t > 1");
  switch (dist.name) {
    case DistributionName::Frechet:
      // F(x) = exp(-1/x)
      return -1.0 / std::log1p(-1.0 / t);
    case DistributionName::Burr: {
      // 1 - F(x) = (1 + sqrt(x))^{-2}; sqrt(t) - 1 written without cancellation
      const double s = (t - 1.0) / (std::sqrt(t) + 1.0);
      return s * s;
    }
    case DistributionName::AbsCauchy: {
      // F(x) = (2/pi) atan(x)
      constexpr double half_pi = std::numbers::pi / 2.0;
      if (t <= 2.0) return std::tan(half_pi * ((t - 1.0) / t));
      return 1.0 / std::tan(half_pi / t);
    }
    case DistributionName::UserQuantile:
      if (!dist.user_quantile) throw Error(ErrorKind::Domain, "user quantile not set");
      return dist.user_quantile(t);
  }
  throw Error(ErrorKind::Lookup, "unknown distribution");
}

/// Machine count, per-machine sizes and the master seed.
struct ShardPlan {
  std::vector<std::size_t> sizes;
  std::uint64_t master_seed = 0;

  static ShardPlan equal(std::size_t total, std::size_t machines, std::uint64_t seed) {
    if (machines == 0) throw Error(ErrorKind::Config, "machine count must be positive");
    if (total % machines != 0) {
      throw Error(ErrorKind::Config, "N = " + std::to_string(total) +
                                         " is not divisible by m = " + std::to_string(machines));
    }
    ShardPlan plan{std::vector<std::size_t>(machines, total / machines), seed};
    plan.validate();
    return plan;
  }

  std::size_t machines() const { return sizes.size(); }
  std::size_t total() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }

  void validate() const {
    if (sizes.empty()) throw Error(ErrorKind::Config, "shard plan has no machines");
    for (std::size_t n : sizes) {
      if (n < 2) throw Error(ErrorKind::Config, "every shard needs at least 2 observations");
    }
  }
};

/// One machine's observations. Immutable; keeps the descending order.
class Shard {
 public:
  Shard(int machine_id, std::vector<double> values) : machine_id_(machine_id), values_(std::move(values)) {
    for (double v : values_) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw Error(ErrorKind::Domain, "shard values must be positive and finite");
      }
    }
    sorted_desc_ = values_;
    std::sort(sorted_desc_.begin(), sorted_desc_.end(), std::greater<>());
  }

  int machine_id() const noexcept { return machine_id_; }
  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<double>& sorted_desc() const noexcept { return sorted_desc_; }

  /// M^{(i)}, 1-based as in the usual order-statistic notation.
  double order_statistic(std::size_t i) const {
    if (i < 1 || i > sorted_desc_.size()) throw Error(ErrorKind::Bounds, "order statistic index out of range");
    return sorted_desc_[i - 1];
  }

  Shard scaled(double c) const {
    std::vector<double> v(values_);
    for (double& x : v) x *= c;
    return Shard(machine_id_, std::move(v));
  }

 private:
  int machine_id_;
  std::vector<double> values_;
  std::vector<double> sorted_desc_;
};

/// Draws n observations from one substream.
inline std::vector<double> draw_sample(const TailDistribution& dist, std::size_t n, Xoshiro256& rng) {
  std::vector<double> out(n);
  for (double& x : out) {
    double u = rng.uniform();
    while (u == 0.0) u = rng.uniform();  // U(1) is the lower endpoint, not a valid observation
    x = tail_quantile(dist, pareto1_from_uniform(u));
  }
  return out;
}

/// Shards for one replication. Machine j (1-based) draws from
/// substream_seed(master_seed, replication, j).
inline std::vector<Shard> generate_shards(const TailDistribution& dist, const ShardPlan& plan,
                                          std::uint64_t replication = 0) {
  plan.validate();
  std::vector<Shard> shards;
  shards.reserve(plan.machines());
  for (std::size_t j = 0; j < plan.machines(); ++j) {
    Xoshiro256 rng(substream_seed(plan.master_seed, replication, j + 1));
    shards.emplace_back(static_cast<int>(j + 1), draw_sample(dist, plan.sizes[j], rng));
  }
  return shards;
}

}  // namespace dhill
