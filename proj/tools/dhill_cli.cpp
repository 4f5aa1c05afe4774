// dhill: command-line front end for simulation, estimation, theory tables and
// the coordinator/worker protocol.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "dhill/central.hpp"
#include "dhill/io.hpp"
#include "dhill/simharness.hpp"
#include "dhill/theory.hpp"
#include "dhill/transport.hpp"

namespace fs = std::filesystem;
using namespace dhill;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitDegenerate = 3;
constexpr int kExitIo = 4;

int exit_code_for(const Error& e) {
  if (e.is_degenerate()) return kExitDegenerate;
  switch (e.kind()) {
    case ErrorKind::Io:
    case ErrorKind::Protocol:
    case ErrorKind::Session:
    case ErrorKind::BudgetViolation:
      return kExitIo;
    default:
      return kExitConfig;
  }
}

struct EstimateOptions {
  std::size_t k_n = 0;
  std::size_t k_rho = 0;
  double tau = 0.0;
  std::string mode = "five";
  std::string policy = "strict";
  std::string weighting = "equal";
  std::string quantile_form = "published";
  std::optional<double> p_N;

  EstimatorConfig config() const {
    EstimatorConfig c;
    c.k_n = k_n;
    c.k_rho = k_rho;
    c.tau = tau;
    try {
      c.mode = transmission_mode_from_string(mode);
      c.rho_policy = rho_policy_from_string(policy);
      c.weighting = weighting_from_string(weighting);
    } catch (const Error& e) {
      throw Error(ErrorKind::Config, e.what());
    }
    if (quantile_form == "published") {
      c.quantile_form = QuantileCorrection::AsPublished;
    } else if (quantile_form == "consistent") {
      c.quantile_form = QuantileCorrection::Consistent;
    } else {
      throw Error(ErrorKind::Config, "quantile form must be published or consistent");
    }
    c.validate();
    return c;
  }
};

void add_estimate_options(CLI::App* cmd, EstimateOptions& o) {
  cmd->add_option("--kn", o.k_n, "Top order statistics for the Hill part")->required();
  cmd->add_option("--krho", o.k_rho, "Top order statistics for rho")->required();
  cmd->add_option("--tau", o.tau, "Tuning parameter of the rho estimator (>= 0)")->required();
  cmd->add_option("--mode", o.mode, "five|six|three|one")->required();
  cmd->add_option("--policy", o.policy, "strict|fallback");
  cmd->add_option("--weighting", o.weighting, "equal|size");
  cmd->add_option("--quantile-form", o.quantile_form, "published|consistent");
  cmd->add_option("--pn", o.p_N, "Tail probability for the quantile estimate (six mode)");
}

void print_report(const EstimateReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? sim::format_double(*v) : std::string("NA"); };
  std::cout << "gamma_dh=" << opt(r.gamma_dh) << '\n'
            << "rho_hat=" << opt(r.rho_hat) << '\n'
            << "gamma_unbiased=" << sim::format_double(r.gamma_unbiased) << '\n'
            << "variant=" << to_string(r.variant) << '\n'
            << "quantile=" << opt(r.quantile) << '\n';
  for (const auto& d : r.diagnostics) std::cout << "diagnostic=" << d << '\n';
}

int run_simulate(const std::string& config_path, const std::string& out_dir, std::optional<unsigned> threads) {
  auto config = sim::load_config(config_path);
  if (threads) config.threads = *threads;
  const auto report = sim::run_experiment(config);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir);
  sim::write_report_csv(report, fs::path(out_dir) / "report.csv");
  sim::write_text_file(fs::path(out_dir) / "metadata.txt", sim::report_metadata_text(report));
  std::size_t invalid = 0;
  for (const auto& row : report.rows) invalid += report.row_valid(row) ? 0 : 1;
  std::cerr << report.rows.size() << " rows written to " << out_dir << " (" << invalid
            << " with more than 10% failed replications)\n";
  return kExitOk;
}

int run_trace(const std::string& config_path, std::size_t rep, const std::string& out) {
  const auto config = sim::load_config(config_path);
  sim::write_trace_csv(sim::single_sample_trace(config, rep), out);
  return kExitOk;
}

int run_estimate(const std::vector<std::string>& shard_files, const EstimateOptions& o) {
  const EstimatorConfig config = o.config();
  std::vector<WorkerSummary> summaries;
  int id = 1;
  for (const auto& f : shard_files) {
    const Shard shard = read_shard_file(f, id++);
    summaries.push_back(make_summary(shard, config.k_n, config.k_rho, config.tau, config.mode, config.rho_policy));
  }
  print_report(estimate(summaries, config, o.p_N));
  return kExitOk;
}

int run_generate(const std::string& dist, std::size_t total, std::size_t machines, std::uint64_t seed, std::size_t rep,
                 const std::string& out_dir) {
  TailDistribution d;
  try {
    d = TailDistribution::builtin(distribution_from_string(dist));
  } catch (const Error& e) {
    throw Error(ErrorKind::Config, e.what());
  }
  if (machines == 0 || total % machines != 0) throw Error(ErrorKind::Config, "N must be a multiple of m");
  const auto shards = generate_shards(d, ShardPlan::equal(total, machines, seed), rep);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + out_dir);
  for (const auto& s : shards) {
    const auto path = fs::path(out_dir) / ("shard_" + std::to_string(s.machine_id()) + ".txt");
    write_shard_file(path, s.values());
    std::cout << path.string() << '\n';
  }
  return kExitOk;
}

int run_serve_worker(const std::string& shard_file, const std::string& listen) {
  const Shard shard = read_shard_file(shard_file);
  if (listen == "stdio" || listen == "-") {
    transport::ignore_sigpipe();
    transport::LineChannel channel(dup(STDIN_FILENO), dup(STDOUT_FILENO));
    transport::worker_serve(shard, channel);
    return kExitOk;
  }
  transport::TcpListener listener(listen);
  std::cout << "listening " << listener.endpoint() << std::endl;
  for (;;) {
    auto channel = listener.accept();
    if (transport::worker_serve(shard, channel)) return kExitOk;
  }
}

int run_coordinate(const std::string& workers, const EstimateOptions& o, bool allow_partial, bool show_lines) {
  transport::SessionConfig session;
  session.estimator = o.config();
  session.p_N = o.p_N;
  session.allow_partial = allow_partial;
  std::vector<std::string> endpoints;
  for (auto part : sim::detail::split(workers, ',')) {
    const auto t = sim::detail::trim(part);
    if (!t.empty()) endpoints.emplace_back(t);
  }
  const auto result = transport::coordinate(session, endpoints);
  if (show_lines) {
    for (const auto& line : result.summary_lines) std::cerr << line << '\n';
  }
  std::cout << "workers=" << result.summaries.size() << '\n'
            << "statistic_scalars=" << result.statistic_scalars << '\n';
  print_report(result.report);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed Hill and bias-corrected tail index estimation"};
  app.require_subcommand(1);

  std::string config_path, out;
  std::optional<unsigned> threads;
  auto* simulate = app.add_subcommand("simulate", "Run a Monte Carlo experiment and write report.csv");
  simulate->add_option("--config", config_path, "Experiment config (key=value)")->required();
  simulate->add_option("--out", out, "Output directory")->required();
  simulate->add_option("--threads", threads, "Worker threads (overrides the config)");

  std::size_t rep = 0;
  auto* trace = app.add_subcommand("trace", "Estimates along the k_n grid for a single replication");
  trace->add_option("--config", config_path, "Experiment config (key=value)")->required();
  trace->add_option("--rep", rep, "Replication index")->required();
  trace->add_option("--out", out, "Output CSV file")->required();

  std::vector<std::string> shard_files;
  EstimateOptions est;
  auto* estimate_cmd = app.add_subcommand("estimate", "Estimate from shard files (one value per line)");
  estimate_cmd->add_option("--shards", shard_files, "Shard files, one per machine")->required();
  add_estimate_options(estimate_cmd, est);

  std::string dist = "frechet";
  std::size_t total = 10000, machines = 20;
  std::uint64_t seed = 20240501;
  auto* generate = app.add_subcommand("generate", "Write simulated shards to files");
  generate->add_option("--distribution", dist, "frechet|burr|abs_cauchy");
  generate->add_option("--N", total, "Total sample size");
  generate->add_option("--m", machines, "Number of machines");
  generate->add_option("--seed", seed, "Master seed");
  generate->add_option("--rep", rep, "Replication index");
  generate->add_option("--out", out, "Output directory")->required();

  auto* theory_cmd = app.add_subcommand("theory", "Closed-form quantities");
  theory_cmd->require_subcommand(1);
  double k = 0, n = 0, rho = -1, gamma = 1, rho_tilde = -1;
  auto* g_cmd = theory_cmd->add_subcommand("g", "g(k, n, rho): exact, fixed-k limit and expansion");
  g_cmd->add_option("--k", k)->required();
  g_cmd->add_option("--n", n)->required();
  g_cmd->add_option("--rho", rho)->required();
  auto* var_cmd = theory_cmd->add_subcommand("variance", "Asymptotic variances of the Hill and bias-corrected estimators");
  var_cmd->add_option("--gamma", gamma);
  var_cmd->add_option("--rho", rho)->required();
  std::optional<std::string> opt_dist;
  auto* ok_cmd = theory_cmd->add_subcommand("optimal-k", "Rate-optimal k_n for the distributed estimator");
  ok_cmd->add_option("--N", total)->required();
  ok_cmd->add_option("--m", machines)->required();
  ok_cmd->add_option("--distribution", opt_dist, "Take rho and rho_tilde from a built-in distribution");
  ok_cmd->add_option("--rho", rho);
  ok_cmd->add_option("--rho-tilde", rho_tilde);

  std::string shard_file, listen = "stdio";
  auto* serve = app.add_subcommand("serve-worker", "Serve one shard over the line protocol");
  serve->add_option("--shard", shard_file, "Shard file")->required();
  serve->add_option("--listen", listen, "stdio, or host:port (port 0 picks a free port)");

  std::string workers;
  bool allow_partial = false, show_lines = false;
  auto* coord = app.add_subcommand("coordinate", "Collect worker summaries and aggregate");
  coord->add_option("--workers", workers, "Comma-separated endpoints: host:port or exec:<command>")->required();
  add_estimate_options(coord, est);
  coord->add_flag("--allow-partial", allow_partial, "Drop failed workers instead of aborting");
  coord->add_flag("--show-wire", show_lines, "Echo received SUMMARY lines to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*simulate) return run_simulate(config_path, out, threads);
    if (*trace) return run_trace(config_path, rep, out);
    if (*estimate_cmd) return run_estimate(shard_files, est);
    if (*generate) return run_generate(dist, total, machines, seed, rep, out);
    if (*serve) return run_serve_worker(shard_file, listen);
    if (*coord) return run_coordinate(workers, est, allow_partial, show_lines);
    if (*g_cmd) {
      std::cout << "g_exact=" << sim::format_double(theory::g_exact(k, n, rho)) << '\n'
                << "g_fixed_k_limit=" << sim::format_double(theory::g_fixed_k_limit(k, rho)) << '\n'
                << "g_expansion=" << sim::format_double(theory::g_expansion(k, n, rho)) << '\n';
      return kExitOk;
    }
    if (*var_cmd) {
      std::cout << "hill=" << sim::format_double(theory::hill_asymptotic_variance(gamma)) << '\n'
                << "unbiased=" << sim::format_double(theory::unbiased_asymptotic_variance(gamma, rho)) << '\n';
      return kExitOk;
    }
    if (*ok_cmd) {
      if (opt_dist) {
        const auto idx = table1_params(distribution_from_string(*opt_dist));
        rho = idx.rho;
        rho_tilde = idx.rho_tilde;
      }
      std::cout << "rho_star=" << sim::format_double(theory::rho_star(rho, rho_tilde)) << '\n'
                << "k_n=" << theory::optimal_kn_dc(total, machines, rho, rho_tilde) << '\n';
      return kExitOk;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}
