#pragma once

// Monte Carlo driver: replications over (m, k_n, tau, estimator), reduced to
// bias / RMSE / variance rows, plus single-sample traces and CSV output.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <tuple>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <thread>
#include <vector>

#include "dhill/central.hpp"
#include "dhill/distributions.hpp"
#include "dhill/error.hpp"
#include "dhill/worker.hpp"

namespace dhill::sim {

enum class Estimator { DH, Unbiased, V2, V3, Quantile };

inline std::string_view to_string(Estimator e) {
  switch (e) {
    case Estimator::DH: return "DH";
    case Estimator::Unbiased: return "Unbiased";
    case Estimator::V2: return "V2";
    case Estimator::V3: return "V3";
    case Estimator::Quantile: return "Quantile";
  }
  return "unknown";
}

inline Estimator estimator_from_string(std::string_view s) {
  for (auto e : {Estimator::DH, Estimator::Unbiased, Estimator::V2, Estimator::V3, Estimator::Quantile}) {
    if (to_string(e) == s) return e;
  }
  throw Error(ErrorKind::Config, "unknown estimator '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Number formatting shared by every text output.

/// 17 significant digits, trailing zeros dropped; parses back to the same double.
inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  double v = 0.0;
  if (s.empty()) return std::nullopt;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::optional<std::uint64_t> parse_uint(std::string_view s) {
  std::uint64_t v = 0;
  if (s.empty()) return std::nullopt;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

// ---------------------------------------------------------------------------
// Configuration

struct ExperimentConfig {
  TailDistribution distribution = TailDistribution::builtin(DistributionName::Frechet);
  std::size_t total_n = 10000;
  std::vector<std::size_t> m_list{1, 20, 100};
  // Explicit k_n values shared by every m. Empty: see knm_grid / default grid.
  std::vector<std::size_t> kn_grid;
  // Alternative: values of k_n * m; k_n = value / m per machine count.
  std::vector<std::size_t> knm_grid;
  double krho_exponent = 0.98;
  // Explicit k_rho per entry of m_list; overrides the exponent rule.
  std::vector<std::size_t> krho_list;
  std::vector<double> tau_list{0.0, 0.5, 1.0};
  std::size_t replications = 200;
  std::uint64_t master_seed = 20240501;
  std::vector<Estimator> estimators{Estimator::DH, Estimator::Unbiased, Estimator::V2, Estimator::V3};
  std::optional<double> p_N;
  RhoPolicy rho_policy = RhoPolicy::Strict;
  QuantileCorrection quantile_form = QuantileCorrection::AsPublished;
  unsigned threads = 0;  // 0: hardware concurrency

  std::size_t shard_size(std::size_t m) const { return total_n / m; }

  std::size_t k_rho(std::size_t m) const {
    if (!krho_list.empty()) {
      auto it = std::find(m_list.begin(), m_list.end(), m);
      return krho_list.at(static_cast<std::size_t>(it - m_list.begin()));
    }
    return static_cast<std::size_t>(std::floor(std::pow(static_cast<double>(shard_size(m)), krho_exponent)));
  }

  /// k_n values evaluated at machine count m.
  std::vector<std::size_t> kn_values(std::size_t m) const {
    if (!kn_grid.empty()) return kn_grid;
    std::vector<std::size_t> out;
    if (!knm_grid.empty()) {
      for (std::size_t v : knm_grid) out.push_back(v / m);
      return out;
    }
    // Geometric from 10 to n/2, kept below k_rho.
    const double lo = 10.0;
    const double hi = std::min(static_cast<double>(shard_size(m)) / 2.0, static_cast<double>(k_rho(m) - 1));
    constexpr int points = 12;
    for (int i = 0; i < points; ++i) {
      const double v = lo * std::pow(hi / lo, static_cast<double>(i) / (points - 1));
      const auto k = static_cast<std::size_t>(std::round(v));
      if (out.empty() || k > out.back()) out.push_back(k);
    }
    return out;
  }

  void validate() const {
    if (total_n < 2) throw Error(ErrorKind::Config, "N must be at least 2");
    if (m_list.empty()) throw Error(ErrorKind::Config, "m list is empty");
    if (tau_list.empty()) throw Error(ErrorKind::Config, "tau list is empty");
    if (replications == 0) throw Error(ErrorKind::Config, "replications must be positive");
    if (estimators.empty()) throw Error(ErrorKind::Config, "no estimators selected");
    if (!kn_grid.empty() && !knm_grid.empty()) throw Error(ErrorKind::Config, "give kn_grid or knm_grid, not both");
    if (!krho_list.empty() && krho_list.size() != m_list.size()) {
      throw Error(ErrorKind::Config, "krho list must have one entry per m");
    }
    for (double tau : tau_list) {
      if (!(tau >= 0.0 && tau <= 1.0)) throw Error(ErrorKind::Config, "tau values must lie in [0, 1]");
    }
    const bool wants_quantile = std::find(estimators.begin(), estimators.end(), Estimator::Quantile) != estimators.end();
    if (wants_quantile && !p_N) throw Error(ErrorKind::Config, "Quantile estimator needs p_n");
    if (p_N && !(*p_N > 0.0 && *p_N < 1.0)) throw Error(ErrorKind::Config, "p_n must lie in (0, 1)");
    for (std::size_t m : m_list) {
      if (m == 0 || total_n % m != 0) {
        throw Error(ErrorKind::Config, "N must be divisible by every m (m = " + std::to_string(m) + ")");
      }
      const std::size_t n = shard_size(m);
      const std::size_t krho = k_rho(m);
      if (krho + 1 > n) throw Error(ErrorKind::Config, "k_rho must be below n for m = " + std::to_string(m));
      for (std::size_t kn : kn_values(m)) {
        if (kn < 1) throw Error(ErrorKind::Config, "k_n must be >= 1 for m = " + std::to_string(m));
        if (!(kn < krho)) {
          throw Error(ErrorKind::Config, "k_n = " + std::to_string(kn) + " is not below k_rho = " +
                                             std::to_string(krho) + " for m = " + std::to_string(m));
        }
      }
    }
  }

  /// Canonical key=value rendering; also the input of config_hash.
  std::string canonical() const {
    auto join = [](const auto& xs, auto fmt) {
      std::string s;
      for (std::size_t i = 0; i < xs.size(); ++i) s += (i ? "," : "") + fmt(xs[i]);
      return s;
    };
    auto u = [](std::size_t v) { return std::to_string(v); };
    auto d = [](double v) { return format_double(v); };
    auto e = [](Estimator v) { return std::string(to_string(v)); };
    std::ostringstream os;
    os << "distribution=" << distribution.label() << '\n'
       << "N=" << total_n << '\n'
       << "m=" << join(m_list, u) << '\n';
    if (!kn_grid.empty()) os << "kn_grid=" << join(kn_grid, u) << '\n';
    if (!knm_grid.empty()) os << "knm_grid=" << join(knm_grid, u) << '\n';
    if (!krho_list.empty()) {
      os << "krho=" << join(krho_list, u) << '\n';
    } else {
      os << "krho_exponent=" << format_double(krho_exponent) << '\n';
    }
    os << "tau=" << join(tau_list, d) << '\n'
       << "replications=" << replications << '\n'
       << "seed=" << master_seed << '\n'
       << "estimators=" << join(estimators, e) << '\n';
    if (p_N) os << "p_n=" << format_double(*p_N) << '\n';
    os << "rho_policy=" << to_string(rho_policy) << '\n'
       << "quantile_form=" << (quantile_form == QuantileCorrection::AsPublished ? "published" : "consistent") << '\n';
    return os.str();
  }
};

inline std::uint64_t config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : config.canonical()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::size_t> parse_uint_list(std::string_view key, std::string_view v) {
  std::vector<std::size_t> out;
  for (auto part : split(v, ',')) {
    auto x = parse_uint(part);
    if (!x) throw Error(ErrorKind::Config, "bad integer '" + std::string(part) + "' for " + std::string(key));
    out.push_back(static_cast<std::size_t>(*x));
  }
  return out;
}

inline std::vector<double> parse_double_list(std::string_view key, std::string_view v) {
  std::vector<double> out;
  for (auto part : split(v, ',')) {
    auto x = parse_double(part);
    if (!x) throw Error(ErrorKind::Config, "bad number '" + std::string(part) + "' for " + std::string(key));
    out.push_back(*x);
  }
  return out;
}

}  // namespace detail

/// Parses the flat `key = value` format; `#` starts a comment.
inline ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (auto raw : detail::split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorKind::Config, "line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key(detail::trim(line.substr(0, eq)));
    const std::string_view value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw Error(ErrorKind::Config, "duplicate key '" + key + "'");

    auto one_uint = [&] {
      auto x = parse_uint(value);
      if (!x) throw Error(ErrorKind::Config, "bad integer for " + key);
      return *x;
    };
    auto one_double = [&] {
      auto x = parse_double(value);
      if (!x) throw Error(ErrorKind::Config, "bad number for " + key);
      return *x;
    };

    if (key == "distribution") {
      try {
        c.distribution = TailDistribution::builtin(distribution_from_string(value));
      } catch (const Error& e) {
        throw Error(ErrorKind::Config, e.what());
      }
    } else if (key == "N") {
      c.total_n = one_uint();
    } else if (key == "m") {
      c.m_list = detail::parse_uint_list(key, value);
    } else if (key == "kn_grid") {
      c.kn_grid = detail::parse_uint_list(key, value);
    } else if (key == "knm_grid") {
      c.knm_grid = detail::parse_uint_list(key, value);
    } else if (key == "krho_exponent") {
      c.krho_exponent = one_double();
    } else if (key == "krho") {
      c.krho_list = detail::parse_uint_list(key, value);
    } else if (key == "tau") {
      c.tau_list = detail::parse_double_list(key, value);
    } else if (key == "replications") {
      c.replications = one_uint();
    } else if (key == "seed") {
      c.master_seed = one_uint();
    } else if (key == "estimators") {
      c.estimators.clear();
      for (auto part : detail::split(value, ',')) c.estimators.push_back(estimator_from_string(part));
    } else if (key == "p_n") {
      c.p_N = one_double();
    } else if (key == "rho_policy") {
      c.rho_policy = rho_policy_from_string(value);
    } else if (key == "quantile_form") {
      if (value == "published") {
        c.quantile_form = QuantileCorrection::AsPublished;
      } else if (value == "consistent") {
        c.quantile_form = QuantileCorrection::Consistent;
      } else {
        throw Error(ErrorKind::Config, "quantile_form must be published or consistent");
      }
    } else if (key == "threads") {
      c.threads = static_cast<unsigned>(one_uint());
    } else {
      throw Error(ErrorKind::Config, "unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Replications

/// One estimate at one grid point; nullopt marks a degenerate replication.
struct PointEstimate {
  std::size_t m = 0;
  std::size_t k_n = 0;
  double tau = 0.0;
  Estimator estimator = Estimator::DH;
  std::optional<double> value;

  bool operator==(const PointEstimate&) const = default;
};

/// Estimates of every (m, k_n, tau, estimator) point, in that nesting order.
using ReplicationResult = std::vector<PointEstimate>;

namespace detail {

inline bool wants(const ExperimentConfig& c, Estimator e) {
  return std::find(c.estimators.begin(), c.estimators.end(), e) != c.estimators.end();
}

template <typename F>
std::optional<double> guarded(F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.is_degenerate() || e.kind() == ErrorKind::Domain) return std::nullopt;
    throw;
  }
}

inline std::vector<WorkerSummary> summaries_for(const std::vector<Shard>& shards, std::size_t k_n, std::size_t k_rho,
                                                double tau, TransmissionMode mode, RhoPolicy policy) {
  std::vector<WorkerSummary> out;
  out.reserve(shards.size());
  for (const auto& s : shards) out.push_back(make_summary(s, k_n, k_rho, tau, mode, policy));
  return out;
}

}  // namespace detail

/// Shards for one (replication, m); exposed for tests and traces.
inline std::vector<Shard> replication_shards(const ExperimentConfig& config, std::size_t m, std::size_t rep) {
  return generate_shards(config.distribution, ShardPlan::equal(config.total_n, m, config.master_seed), rep);
}

/// All estimates of one replication. Shards are generated and sorted once per
/// machine count; every k_n and tau is evaluated on the same data.
inline ReplicationResult run_replication(const ExperimentConfig& config, std::size_t rep) {
  using detail::guarded;
  using detail::wants;
  ReplicationResult out;
  for (std::size_t m : config.m_list) {
    const std::vector<Shard> shards = replication_shards(config, m, rep);
    const std::size_t k_rho = config.k_rho(m);
    for (std::size_t k_n : config.kn_values(m)) {
      // Five-stat payloads do not depend on tau; six-stat ones only add thresholds.
      const bool need_six = wants(config, Estimator::Quantile);
      const auto mode_full = need_six ? TransmissionMode::SixStat : TransmissionMode::FiveStat;
      const auto full = detail::summaries_for(shards, k_n, k_rho, 0.0, mode_full, config.rho_policy);
      const double dh = distributed_hill(aggregate(full, Weighting::EqualMean));

      for (double tau : config.tau_list) {
        EstimatorConfig ec{k_n, k_rho, tau, mode_full, config.rho_policy, Weighting::EqualMean, config.quantile_form};
        std::optional<double> unbiased;
        if (wants(config, Estimator::Unbiased)) unbiased = guarded([&] { return estimate(full, ec).gamma_unbiased; });
        std::optional<double> quantile;
        if (need_six) quantile = guarded([&] { return *estimate(full, ec, config.p_N).quantile; });
        for (Estimator est : config.estimators) {
          std::optional<double> v;
          switch (est) {
            case Estimator::DH:
              v = dh;
              break;
            case Estimator::Unbiased:
              v = unbiased;
              break;
            case Estimator::Quantile:
              v = quantile;
              break;
            case Estimator::V2:
              v = guarded([&] {
                auto s = detail::summaries_for(shards, k_n, k_rho, tau, TransmissionMode::ThreeStat, config.rho_policy);
                ec.mode = TransmissionMode::ThreeStat;
                return estimate(s, ec).gamma_unbiased;
              });
              break;
            case Estimator::V3:
              v = guarded([&] {
                auto s = detail::summaries_for(shards, k_n, k_rho, tau, TransmissionMode::OneStat, config.rho_policy);
                ec.mode = TransmissionMode::OneStat;
                return estimate(s, ec).gamma_unbiased;
              });
              break;
          }
          out.push_back(PointEstimate{m, k_n, tau, est, v});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string distribution;
  std::size_t m = 0;
  std::size_t k_n = 0;
  double tau = 0.0;
  std::string estimator;
  double bias = 0.0;
  double abs_bias = 0.0;
  double rmse = 0.0;
  double emp_variance = 0.0;
  std::size_t n_failures = 0;

  bool operator==(const ReportRow&) const = default;
};

struct ReportMetadata {
  std::uint64_t master_seed = 0;
  std::uint64_t config_hash = 0;
  std::size_t replications = 0;
  double wall_seconds = 0.0;
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  ReportMetadata metadata;

  /// Rows with more than 10% failed replications are not trustworthy.
  bool row_valid(const ReportRow& row) const { return row.n_failures * 10 <= metadata.replications; }

  const ReportRow* find(std::size_t m, std::size_t k_n, double tau, std::string_view estimator) const {
    for (const auto& r : rows) {
      if (r.m == m && r.k_n == k_n && r.tau == tau && r.estimator == estimator) return &r;
    }
    return nullptr;
  }
};

/// True value the estimator targets.
inline double target_value(const ExperimentConfig& config, Estimator e) {
  if (e == Estimator::Quantile) return tail_quantile(config.distribution, 1.0 / *config.p_N);
  return config.distribution.indices.gamma;
}

/// Runs `fn(rep)` for every replication on `threads` workers; results are
/// stored by replication index, so the schedule does not affect the output.
template <typename Fn>
auto run_parallel(std::size_t count, unsigned threads, Fn fn) {
  using Result = decltype(fn(std::size_t{0}));
  std::vector<Result> results(count);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) results[i] = fn(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        try {
          results[i] = fn(i);
        } catch (...) {
          if (!failed.exchange(true)) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

/// Reduces replications (in replication order) into one row per point.
inline ExperimentReport summarize(const ExperimentConfig& config, const std::vector<ReplicationResult>& reps) {
  ExperimentReport report;
  report.metadata.master_seed = config.master_seed;
  report.metadata.config_hash = config_hash(config);
  report.metadata.replications = reps.size();
  if (reps.empty()) return report;
  const std::size_t points = reps.front().size();
  for (std::size_t p = 0; p < points; ++p) {
    const PointEstimate& key = reps.front()[p];
    const double truth = target_value(config, key.estimator);
    KahanSum sum;
    std::size_t ok = 0;
    for (const auto& r : reps) {
      if (r[p].value) {
        sum.add(*r[p].value);
        ++ok;
      }
    }
    ReportRow row;
    row.distribution = std::string(config.distribution.label());
    row.m = key.m;
    row.k_n = key.k_n;
    row.tau = key.tau;
    row.estimator = std::string(to_string(key.estimator));
    row.n_failures = reps.size() - ok;
    if (ok > 0) {
      const double mean = sum.value() / static_cast<double>(ok);
      KahanSum sq_err;
      KahanSum sq_dev;
      for (const auto& r : reps) {
        if (!r[p].value) continue;
        const double e = *r[p].value - truth;
        const double dv = *r[p].value - mean;
        sq_err.add(e * e);
        sq_dev.add(dv * dv);
      }
      row.bias = mean - truth;
      row.abs_bias = std::fabs(row.bias);
      row.rmse = std::sqrt(sq_err.value() / static_cast<double>(ok));
      row.emp_variance = sq_dev.value() / static_cast<double>(ok);
    } else {
      row.bias = row.abs_bias = row.rmse = row.emp_variance = std::numeric_limits<double>::quiet_NaN();
    }
    report.rows.push_back(std::move(row));
  }
  return report;
}

inline ExperimentReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  auto reps = run_parallel(config.replications, config.threads,
                           [&](std::size_t rep) { return run_replication(config, rep); });
  ExperimentReport report = summarize(config, reps);
  report.metadata.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---------------------------------------------------------------------------
// Single-sample traces

struct TraceSeries {
  std::size_t m = 0;
  double tau = 0.0;
  Estimator estimator = Estimator::DH;
  std::vector<std::size_t> k_n;
  std::vector<std::optional<double>> values;
};

struct SingleSampleTrace {
  std::string distribution;
  std::size_t replication = 0;
  std::vector<TraceSeries> series;

  const TraceSeries* find(std::size_t m, double tau, Estimator e) const {
    for (const auto& s : series) {
      if (s.m == m && s.tau == tau && s.estimator == e) return &s;
    }
    return nullptr;
  }
};

inline SingleSampleTrace single_sample_trace(const ExperimentConfig& config, std::size_t rep) {
  config.validate();
  SingleSampleTrace trace;
  trace.distribution = std::string(config.distribution.label());
  trace.replication = rep;
  std::map<std::tuple<std::size_t, double, int>, std::size_t> index;
  for (const PointEstimate& p : run_replication(config, rep)) {
    const auto key = std::make_tuple(p.m, p.tau, static_cast<int>(p.estimator));
    auto [it, inserted] = index.try_emplace(key, trace.series.size());
    if (inserted) trace.series.push_back(TraceSeries{p.m, p.tau, p.estimator, {}, {}});
    auto& s = trace.series[it->second];
    s.k_n.push_back(p.k_n);
    s.values.push_back(p.value);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kReportHeader =
    "distribution,m,k_n,tau,estimator,bias,abs_bias,rmse,emp_variance,n_failures";
inline constexpr std::string_view kTraceHeader = "distribution,m,k_n,k_n_m,tau,estimator,estimate";

inline std::string report_csv(const ExperimentReport& report) {
  std::string out(kReportHeader);
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.distribution + ',' + std::to_string(r.m) + ',' + std::to_string(r.k_n) + ',' + format_double(r.tau) +
           ',' + r.estimator + ',' + format_double(r.bias) + ',' + format_double(r.abs_bias) + ',' +
           format_double(r.rmse) + ',' + format_double(r.emp_variance) + ',' + std::to_string(r.n_failures) + '\n';
  }
  return out;
}

inline std::string trace_csv(const SingleSampleTrace& trace) {
  std::string out(kTraceHeader);
  out += '\n';
  for (const auto& s : trace.series) {
    for (std::size_t i = 0; i < s.k_n.size(); ++i) {
      out += trace.distribution + ',' + std::to_string(s.m) + ',' + std::to_string(s.k_n[i]) + ',' +
             std::to_string(s.k_n[i] * s.m) + ',' + format_double(s.tau) + ',' + std::string(to_string(s.estimator)) +
             ',' + (s.values[i] ? format_double(*s.values[i]) : std::string()) + '\n';
    }
  }
  return out;
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

inline void write_report_csv(const ExperimentReport& report, const std::filesystem::path& path) {
  write_text_file(path, report_csv(report));
}

inline void write_trace_csv(const SingleSampleTrace& trace, const std::filesystem::path& path) {
  write_text_file(path, trace_csv(trace));
}

inline std::string report_metadata_text(const ExperimentReport& report) {
  std::ostringstream os;
  os << "seed=" << report.metadata.master_seed << '\n'
     << "config_hash=" << report.metadata.config_hash << '\n'
     << "replications=" << report.metadata.replications << '\n'
     << "wall_seconds=" << format_double(report.metadata.wall_seconds) << '\n';
  return os.str();
}

/// Parses report CSV text written by report_csv.
inline std::vector<ReportRow> parse_report_csv(std::string_view text) {
  std::vector<ReportRow> rows;
  auto lines = detail::split(text, '\n');
  if (lines.empty() || lines.front() != kReportHeader) throw Error(ErrorKind::Io, "report CSV header mismatch");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = detail::split(lines[i], ',');
    if (f.size() != 10) throw Error(ErrorKind::Io, "report CSV line " + std::to_string(i + 1) + " has wrong arity");
    auto num = [&](std::string_view s) {
      auto v = parse_double(s);
      if (!v) throw Error(ErrorKind::Io, "bad number '" + std::string(s) + "' in report CSV");
      return *v;
    };
    auto uint = [&](std::string_view s) {
      auto v = parse_uint(s);
      if (!v) throw Error(ErrorKind::Io, "bad integer '" + std::string(s) + "' in report CSV");
      return static_cast<std::size_t>(*v);
    };
    rows.push_back(ReportRow{std::string(f[0]), uint(f[1]), uint(f[2]), num(f[3]), std::string(f[4]), num(f[5]),
                             num(f[6]), num(f[7]), num(f[8]), uint(f[9])});
  }
  return rows;
}

inline std::vector<ReportRow> read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report_csv(ss.str());
}

}  // namespace dhill::sim
