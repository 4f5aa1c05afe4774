#include <gtest/gtest.h>

#include <sys/socket.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <thread>
#include <unistd.h>

#include "dhill/io.hpp"
#include "dhill/transport.hpp"

using namespace dhill;
using namespace dhill::transport;

namespace {

std::vector<Shard> frechet_shards(std::size_t total, std::size_t m, std::uint64_t seed) {
  return generate_shards(TailDistribution::builtin(DistributionName::Frechet), ShardPlan::equal(total, m, seed));
}

ErrorKind decode_kind(std::string_view line, std::optional<std::size_t>* offset = nullptr) {
  try {
    decode(line);
  } catch (const Error& e) {
    if (offset) *offset = e.byte_offset();
    return e.kind();
  }
  return ErrorKind::Session;  // sentinel: decoded fine
}

struct ShardDir {
  std::filesystem::path dir;
  std::vector<std::filesystem::path> files;

  ShardDir(const std::vector<Shard>& shards, std::string tag) {
    dir = std::filesystem::temp_directory_path() / ("dhill_tr_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    for (const auto& s : shards) {
      files.push_back(dir / ("shard_" + std::to_string(s.machine_id()) + ".txt"));
      write_shard_file(files.back(), s.values());
    }
  }
  ~ShardDir() { std::filesystem::remove_all(dir); }

  std::vector<std::string> exec_endpoints() const {
    std::vector<std::string> out;
    for (const auto& f : files) out.push_back(std::string("exec:") + DHILL_CLI_PATH + " serve-worker --shard " + f.string());
    return out;
  }
};

EstimatorConfig five_config(std::size_t k_n, std::size_t k_rho, double tau) {
  EstimatorConfig c;
  c.k_n = k_n;
  c.k_rho = k_rho;
  c.tau = tau;
  return c;
}

}  // namespace

TEST(Codec, ExactLines) {
  EXPECT_EQ(encode(bye_message()), "BYE");
  EXPECT_EQ(decode("BYE"), bye_message());
  EXPECT_EQ(encode(hello_message()), "HELLO version=1");
  TaskSpec t{3, TransmissionMode::ThreeStat, 20, 400, 0.5, RhoPolicy::FallbackMinusOne};
  EXPECT_EQ(encode(to_wire(t)), "TASK machine_id=3 mode=three k_n=20 k_rho=400 tau=0.5 policy=fallback");
  EXPECT_EQ(task_from_wire(decode(encode(to_wire(t)))), t);
  EXPECT_EQ(encode(error_message(2, ErrorKind::Bounds)), "ERROR machine_id=2 kind=bounds");

  WorkerSummary s;
  s.machine_id = 1;
  s.n = 500;
  s.k_n = 10;
  s.k_rho = 441;
  s.mode = TransmissionMode::OneStat;
  s.local_gamma = 0.1;
  EXPECT_EQ(encode(to_wire(s)), "SUMMARY machine_id=1 mode=one n=500 k_n=10 k_rho=441 local_gamma=0.10000000000000001");
}

TEST(Codec, RandomSummariesRoundTrip) {
  const auto shards = frechet_shards(20000, 20, 17);
  std::mt19937_64 g(3);
  for (int trial = 0; trial < 400; ++trial) {
    const auto& shard = shards[trial % shards.size()];
    const std::size_t k_rho = 100 + g() % 800;
    const std::size_t k_n = 1 + g() % (k_rho - 1);
    const auto mode = static_cast<TransmissionMode>(g() % 4);
    const double tau = static_cast<double>(g() % 5) / 4.0;
    const auto s = make_summary(shard, k_n, k_rho, tau, mode, RhoPolicy::FallbackMinusOne);
    const std::string line = encode(to_wire(s));
    EXPECT_EQ(line.find('\n'), std::string::npos);
    const auto back = summary_from_wire(decode(line));
    ASSERT_EQ(back, s) << line;
    EXPECT_EQ(*audit_statistic_count(line), statistic_budget(mode));
    EXPECT_EQ(encode(to_wire(back)), line);
  }
}

TEST(Codec, FloatsAreLossless) {
  std::mt19937_64 g(11);
  std::uniform_real_distribution<double> expo(-300.0, 300.0);
  for (int i = 0; i < 20000; ++i) {
    const double v = std::pow(10.0, expo(g)) * (g() % 2 ? 1.0 : -1.0);
    WorkerSummary s;
    s.machine_id = 1;
    s.mode = TransmissionMode::OneStat;
    s.local_gamma = v;
    const auto back = summary_from_wire(decode(encode(to_wire(s))));
    ASSERT_EQ(std::memcmp(&*back.local_gamma, &v, sizeof v), 0);
  }
}

TEST(Codec, FiveStatLineHasFiveStatistics) {
  const auto s = make_summary(frechet_shards(5000, 10, 1)[0], 10, 300, 0.0, TransmissionMode::FiveStat);
  const std::string line = encode(to_wire(s));
  EXPECT_EQ(line.rfind("SUMMARY machine_id=1 mode=five n=500 k_n=10 k_rho=300 r1_kn=", 0), 0u);
  std::size_t stats = 0;
  for (auto key : schema::kAllStatistics) stats += line.find(" " + std::string(key) + "=") != std::string::npos;
  EXPECT_EQ(stats, 5u);
}

TEST(Codec, BudgetViolations) {
  const std::string five =
      "SUMMARY machine_id=1 mode=five n=500 k_n=10 k_rho=300 r1_kn=1 r2_kn=2 r1_krho=1 r2_krho=2 r3_krho=6";
  EXPECT_EQ(decode_kind(five), ErrorKind::Session);
  EXPECT_EQ(decode_kind(five + " threshold=3"), ErrorKind::BudgetViolation);
  EXPECT_EQ(decode_kind(five + " local_rho=-1"), ErrorKind::BudgetViolation);
  EXPECT_EQ(decode_kind("SUMMARY machine_id=1 mode=one n=5 k_n=1 k_rho=3 local_gamma=1 r1_kn=1"),
            ErrorKind::BudgetViolation);

  // Encoding a summary with a sixth statistic is refused too.
  WireMessage m = decode(five);
  m.fields.push_back({"threshold", 3.0});
  try {
    encode(m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BudgetViolation);
  }
  WorkerSummary s = summary_from_wire(decode(five));
  s.threshold = 3.0;
  EXPECT_THROW(to_wire(s), Error);
}

TEST(Codec, MalformedLinesReportOffsets) {
  std::optional<std::size_t> off;
  const std::string full =
      "SUMMARY machine_id=1 mode=five n=500 k_n=10 k_rho=300 r1_kn=1 r2_kn=2 r1_krho=1 r2_krho=2 r3_krho=6";
  const std::string cut = full.substr(0, full.find(" r3_krho"));
  EXPECT_EQ(decode_kind(cut, &off), ErrorKind::Protocol);
  EXPECT_EQ(off, cut.size());

  EXPECT_EQ(decode_kind("", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 0u);
  EXPECT_EQ(decode_kind("HOWDY version=1", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 0u);
  EXPECT_EQ(decode_kind("HELLO colour=1", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 6u);
  EXPECT_EQ(decode_kind("HELLO version=1 version=1", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 16u);
  EXPECT_EQ(decode_kind("HELLO version=x1", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 14u);
  EXPECT_EQ(decode_kind("HELLO version", &off), ErrorKind::Protocol);
  EXPECT_EQ(off, 6u);
  EXPECT_EQ(decode_kind("HELLO  version=1", &off), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("HELLO version=1 "), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("BYE now=1"), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("TASK machine_id=1 mode=five k_n=1 k_rho=3 tau=nan policy=strict"), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("TASK machine_id=1 mode=Five k_n=1 k_rho=3 tau=0 policy=strict"), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("TASK mode=five machine_id=1 k_n=1 k_rho=3 tau=0 policy=strict"), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("SUMMARY machine_id=1 mode=seven n=5 k_n=1 k_rho=3 local_gamma=1"), ErrorKind::Protocol);
  EXPECT_EQ(decode_kind("SUMMARY machine_id=1 mode=one n=5 k_n=1 k_rho=3 local_gamma=1\r"), ErrorKind::Protocol);
}

TEST(Codec, NonFiniteRefused) {
  WorkerSummary s;
  s.machine_id = 1;
  s.mode = TransmissionMode::OneStat;
  for (double bad : {std::nan(""), HUGE_VAL, -HUGE_VAL}) {
    s.local_gamma = bad;
    try {
      encode(to_wire(s));
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Protocol);
    }
  }
}

// ---------------------------------------------------------------------------

namespace {

// Worker thread on one end of a socketpair; the test drives the other end.
struct PairedWorker {
  std::optional<LineChannel> coord;
  std::thread thread;
  bool served_bye = false;

  explicit PairedWorker(const Shard& shard) {
    int fds[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) throw std::runtime_error("socketpair");
    coord.emplace(fds[0], fds[0]);
    thread = std::thread([this, &shard, fd = fds[1]] {
      LineChannel ch(fd, fd);
      served_bye = worker_serve(shard, ch);
    });
  }
  bool finish() {
    coord.reset();
    if (thread.joinable()) thread.join();
    return served_bye;
  }
  ~PairedWorker() { finish(); }
};

}  // namespace

TEST(Worker, ServesSummaryEqualToLocalComputation) {
  const auto shards = frechet_shards(10000, 20, 5);
  const Shard& shard = shards[4];
  PairedWorker w(shard);
  w.coord->send(hello_message());
  EXPECT_EQ(w.coord->receive(), hello_message());
  const TaskSpec task{7, TransmissionMode::FiveStat, 20, 400, 0.0, RhoPolicy::Strict};
  w.coord->send(to_wire(task));
  const std::string first = *w.coord->read_line();
  const auto got = summary_from_wire(decode(first));
  auto want = make_summary(Shard(7, shard.values()), 20, 400, 0.0, TransmissionMode::FiveStat);
  EXPECT_EQ(got, want);
  EXPECT_EQ(got.statistic_count(), 5u);
  // Same task, same bytes.
  w.coord->send(to_wire(task));
  EXPECT_EQ(*w.coord->read_line(), first);
  for (auto mode : {TransmissionMode::SixStat, TransmissionMode::ThreeStat, TransmissionMode::OneStat}) {
    w.coord->send(to_wire(TaskSpec{7, mode, 20, 400, 1.0, RhoPolicy::FallbackMinusOne}));
    const auto s = summary_from_wire(w.coord->receive());
    EXPECT_EQ(s, make_summary(Shard(7, shard.values()), 20, 400, 1.0, mode, RhoPolicy::FallbackMinusOne));
    EXPECT_EQ(s.statistic_count(), statistic_budget(mode));
  }
  w.coord->send(bye_message());
  EXPECT_EQ(w.coord->receive(), bye_message());
  EXPECT_TRUE(w.finish());
}

TEST(Worker, ErrorsAreReportedAndSessionContinues) {
  const auto shards = frechet_shards(1000, 10, 5);
  PairedWorker w(shards[0]);
  w.coord->send(to_wire(TaskSpec{2, TransmissionMode::FiveStat, 10, 100, 0.0, RhoPolicy::Strict}));
  EXPECT_EQ(*w.coord->read_line(), "ERROR machine_id=2 kind=bounds");
  w.coord->write_line("TASK machine_id=2 mode=five");
  EXPECT_EQ(*w.coord->read_line(), "ERROR machine_id=0 kind=protocol");
  w.coord->write_line("SUMMARY machine_id=1 mode=one n=5 k_n=1 k_rho=3 local_gamma=1");
  EXPECT_EQ(*w.coord->read_line(), "ERROR machine_id=0 kind=protocol");
  w.coord->write_line("TASK machine_id=2 mode=five k_n=5 k_rho=50 tau=0 policy=strict");
  EXPECT_EQ(summary_from_wire(w.coord->receive()).machine_id, 2);
}

TEST(Worker, DisconnectEndsServeWithoutBye) {
  const auto shards = frechet_shards(1000, 10, 5);
  PairedWorker w(shards[0]);
  w.coord->send(hello_message());
  w.coord->receive();
  EXPECT_FALSE(w.finish());
}

// ---------------------------------------------------------------------------

TEST(Coordinate, ExecWorkersMatchInProcessEstimate) {
  const auto shards = frechet_shards(10000, 20, 21);
  ShardDir dir(shards, "exec");
  SessionConfig session;
  session.estimator = five_config(20, 400, 0.0);
  const auto res = coordinate(session, dir.exec_endpoints());
  ASSERT_EQ(res.summaries.size(), 20u);
  EXPECT_EQ(res.statistic_scalars, 100u);
  for (const auto& line : res.summary_lines) EXPECT_EQ(*audit_statistic_count(line), 5u);

  std::vector<WorkerSummary> local;
  for (const auto& s : shards) local.push_back(make_summary(s, 20, 400, 0.0, TransmissionMode::FiveStat));
  EXPECT_EQ(res.summaries, local);
  EXPECT_EQ(res.report, estimate(local, session.estimator));
}

TEST(Coordinate, AllModesAndQuantile) {
  const auto shards = frechet_shards(4000, 4, 8);
  ShardDir dir(shards, "modes");
  for (auto mode : {TransmissionMode::SixStat, TransmissionMode::ThreeStat, TransmissionMode::OneStat}) {
    SessionConfig session;
    session.estimator = five_config(30, 600, 0.5);
    session.estimator.mode = mode;
    session.estimator.rho_policy = RhoPolicy::FallbackMinusOne;
    if (mode == TransmissionMode::SixStat) session.p_N = 1e-4;
    const auto res = coordinate(session, dir.exec_endpoints());
    EXPECT_EQ(res.statistic_scalars, 4 * statistic_budget(mode));
    std::vector<WorkerSummary> local;
    for (const auto& s : shards) local.push_back(make_summary(s, 30, 600, 0.5, mode, RhoPolicy::FallbackMinusOne));
    EXPECT_EQ(res.report, estimate(local, session.estimator, session.p_N));
  }
}

TEST(Coordinate, ReplyOrderDoesNotMatter) {
  const auto shards = frechet_shards(3000, 3, 2);
  ShardDir dir(shards, "order");
  SessionConfig session;
  session.estimator = five_config(10, 200, 1.0);
  auto eps = dir.exec_endpoints();
  const auto plain = coordinate(session, eps);
  // Worker 1 answers last.
  eps[0] = "exec:sleep 0.3; " + eps[0].substr(5);
  const auto delayed = coordinate(session, eps);
  EXPECT_EQ(plain.report, delayed.report);
  EXPECT_EQ(plain.summaries, delayed.summaries);
}

TEST(Coordinate, FailedWorkerAbortsUnlessPartialAllowed) {
  auto shards = frechet_shards(3000, 3, 2);
  shards[1] = Shard(2, std::vector<double>(shards[1].values().begin(), shards[1].values().begin() + 50));
  ShardDir dir(shards, "fail");
  SessionConfig session;
  session.estimator = five_config(10, 200, 1.0);
  try {
    coordinate(session, dir.exec_endpoints());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Session);
    EXPECT_NE(std::string(e.what()).find("bounds"), std::string::npos);
  }
  session.allow_partial = true;
  const auto res = coordinate(session, dir.exec_endpoints());
  EXPECT_EQ(res.summaries.size(), 2u);
  bool dropped = false;
  for (const auto& d : res.report.diagnostics) dropped = dropped || d.rfind("worker_dropped:2:", 0) == 0;
  EXPECT_TRUE(dropped);
  const std::vector<WorkerSummary> rest{make_summary(shards[0], 10, 200, 1.0, TransmissionMode::FiveStat),
                                        make_summary(shards[2], 10, 200, 1.0, TransmissionMode::FiveStat)};
  EXPECT_EQ(*res.report.gamma_dh, *estimate(rest, session.estimator).gamma_dh);

  // A worker that never starts.
  auto eps = dir.exec_endpoints();
  eps[2] = "exec:exit 1";
  session.allow_partial = false;
  EXPECT_THROW(coordinate(session, eps), Error);
}

TEST(Coordinate, TcpWorkersInProcess) {
  const auto shards = frechet_shards(4000, 4, 30);
  std::vector<std::unique_ptr<TcpListener>> listeners;
  std::vector<std::thread> threads;
  std::vector<std::string> eps;
  for (const auto& s : shards) {
    listeners.push_back(std::make_unique<TcpListener>("127.0.0.1:0"));
    eps.push_back("tcp:" + listeners.back()->endpoint());
    threads.emplace_back([&s, l = listeners.back().get()] {
      LineChannel ch = l->accept();
      worker_serve(s, ch);
    });
  }
  SessionConfig session;
  session.estimator = five_config(20, 500, 0.0);
  const auto res = coordinate(session, eps);
  for (auto& t : threads) t.join();
  std::vector<WorkerSummary> local;
  for (const auto& s : shards) local.push_back(make_summary(s, 20, 500, 0.0, TransmissionMode::FiveStat));
  EXPECT_EQ(res.report, estimate(local, session.estimator));
}

TEST(Coordinate, TcpWorkersViaCli) {
  const auto shards = frechet_shards(4000, 2, 31);
  ShardDir dir(shards, "tcpcli");
  std::vector<LineChannel> procs;
  std::vector<std::string> eps;
  for (const auto& f : dir.files) {
    procs.push_back(spawn_process(std::string(DHILL_CLI_PATH) + " serve-worker --shard " + f.string() +
                                  " --listen 127.0.0.1:0"));
    const auto banner = procs.back().read_line();
    ASSERT_TRUE(banner);
    ASSERT_EQ(banner->rfind("listening ", 0), 0u) << *banner;
    eps.push_back(banner->substr(10));
  }
  SessionConfig session;
  session.estimator = five_config(20, 500, 0.0);
  const auto res = coordinate(session, eps);
  std::vector<WorkerSummary> local;
  for (const auto& s : shards) local.push_back(make_summary(s, 20, 500, 0.0, TransmissionMode::FiveStat));
  EXPECT_EQ(res.report, estimate(local, session.estimator));
  procs.clear();  // workers exit after BYE; waitpid in the destructor
}

TEST(Endpoints, Parsing) {
  EXPECT_EQ(parse_host_port("tcp:10.0.0.1:7000").host, "10.0.0.1");
  EXPECT_EQ(parse_host_port("localhost:1").port, "1");
  for (auto bad : {"nohost", ":80", "host:", ""}) {
    EXPECT_THROW(parse_host_port(bad), Error) << bad;
  }
  try {
    connect_tcp("127.0.0.1:1");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Session);
  }
}
