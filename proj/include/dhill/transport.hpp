#pragma once

// Coordinator/worker line protocol.
//
// One message per LF-terminated line:  KIND key=value key=value ...
// Keys appear in a fixed order per kind. Integers are decimal, floats use 17
// significant digits (exact round trip), tokens are [a-z0-9_]+. A SUMMARY
// carries machine_id, mode, n, k_n, k_rho and exactly the 1/3/5/6 statistics
// of its mode. See docs/protocol.md.

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <csignal>
#include <cstdint>
#include <cstring>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "dhill/central.hpp"
#include "dhill/error.hpp"
#include "dhill/simharness.hpp"
#include "dhill/worker.hpp"

namespace dhill::transport {

inline constexpr std::int64_t kProtocolVersion = 1;

enum class MessageKind { Hello, Task, Summary, Error, Bye };

inline std::string_view to_string(MessageKind k) {
  switch (k) {
    case MessageKind::Hello: return "HELLO";
    case MessageKind::Task: return "TASK";
    case MessageKind::Summary: return "SUMMARY";
    case MessageKind::Error: return "ERROR";
    case MessageKind::Bye: return "BYE";
  }
  return "";
}

/// A token is a lower-case word such as a mode or an error kind.
struct Token {
  std::string text;
  bool operator==(const Token&) const = default;
};

using FieldValue = std::variant<std::int64_t, double, Token>;

struct WireField {
  std::string key;
  FieldValue value;
  bool operator==(const WireField&) const = default;
};

struct WireMessage {
  MessageKind kind = MessageKind::Bye;
  std::vector<WireField> fields;

  bool operator==(const WireMessage&) const = default;

  const FieldValue* get(std::string_view key) const {
    for (const auto& f : fields) {
      if (f.key == key) return &f.value;
    }
    return nullptr;
  }
};

enum class FieldType { Int, Float, Tok };

struct FieldSpec {
  std::string_view key;
  FieldType type;
};

namespace schema {

inline constexpr FieldSpec kHello[] = {{"version", FieldType::Int}};
inline constexpr FieldSpec kTask[] = {{"machine_id", FieldType::Int}, {"mode", FieldType::Tok},
                                      {"k_n", FieldType::Int},        {"k_rho", FieldType::Int},
                                      {"tau", FieldType::Float},      {"policy", FieldType::Tok}};
inline constexpr FieldSpec kSummaryMeta[] = {{"machine_id", FieldType::Int}, {"mode", FieldType::Tok},
                                             {"n", FieldType::Int},          {"k_n", FieldType::Int},
                                             {"k_rho", FieldType::Int}};
inline constexpr FieldSpec kError[] = {{"machine_id", FieldType::Int}, {"kind", FieldType::Tok}};

/// Every statistic key, in wire order.
inline constexpr std::string_view kAllStatistics[] = {"r1_kn",   "r2_kn",     "r1_krho",   "r2_krho",
                                                      "r3_krho", "threshold", "local_rho", "local_gamma"};

/// Statistic keys carried by a mode, in wire order.
inline std::vector<std::string_view> statistics_for(TransmissionMode mode) {
  switch (mode) {
    case TransmissionMode::FiveStat: return {"r1_kn", "r2_kn", "r1_krho", "r2_krho", "r3_krho"};
    case TransmissionMode::SixStat: return {"r1_kn", "r2_kn", "r1_krho", "r2_krho", "r3_krho", "threshold"};
    case TransmissionMode::ThreeStat: return {"local_rho", "r1_kn", "r2_kn"};
    case TransmissionMode::OneStat: return {"local_gamma"};
  }
  return {};
}

inline bool is_statistic(std::string_view key) {
  for (auto k : kAllStatistics) {
    if (k == key) return true;
  }
  return false;
}

}  // namespace schema

// ---------------------------------------------------------------------------
// Encoding

namespace detail {

inline bool valid_token(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (!((c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_')) return false;
  }
  return true;
}

inline bool type_matches(const FieldValue& v, FieldType t) {
  switch (t) {
    case FieldType::Int: return std::holds_alternative<std::int64_t>(v);
    case FieldType::Float: return std::holds_alternative<double>(v);
    case FieldType::Tok: return std::holds_alternative<Token>(v);
  }
  return false;
}

inline std::vector<FieldSpec> expected_fields(MessageKind kind, std::optional<TransmissionMode> mode) {
  switch (kind) {
    case MessageKind::Hello: return {std::begin(schema::kHello), std::end(schema::kHello)};
    case MessageKind::Task: return {std::begin(schema::kTask), std::end(schema::kTask)};
    case MessageKind::Error: return {std::begin(schema::kError), std::end(schema::kError)};
    case MessageKind::Bye: return {};
    case MessageKind::Summary: {
      std::vector<FieldSpec> out(std::begin(schema::kSummaryMeta), std::end(schema::kSummaryMeta));
      if (mode) {
        for (auto k : schema::statistics_for(*mode)) out.push_back({k, FieldType::Float});
      }
      return out;
    }
  }
  return {};
}

inline std::optional<TransmissionMode> summary_mode(const WireMessage& msg) {
  const FieldValue* v = msg.get("mode");
  if (!v || !std::holds_alternative<Token>(*v)) return std::nullopt;
  try {
    return transmission_mode_from_string(std::get<Token>(*v).text);
  } catch (const Error&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Canonical serialization (no trailing newline). Rejects messages that do
/// not follow the schema, and NaN/Inf.
inline std::string encode(const WireMessage& msg) {
  std::optional<TransmissionMode> mode;
  if (msg.kind == MessageKind::Summary) {
    mode = detail::summary_mode(msg);
    if (!mode) throw Error(ErrorKind::Protocol, "summary without a valid mode");
  }
  const auto expected = detail::expected_fields(msg.kind, mode);
  if (msg.kind == MessageKind::Summary) {
    std::size_t stats = 0;
    for (const auto& f : msg.fields) stats += schema::is_statistic(f.key) ? 1 : 0;
    if (stats != statistic_budget(*mode)) {
      throw Error(ErrorKind::BudgetViolation, "summary carries " + std::to_string(stats) + " statistics, mode " +
                                                  std::string(dhill::to_string(*mode)) + " allows " +
                                                  std::to_string(statistic_budget(*mode)));
    }
  }
  if (msg.fields.size() != expected.size()) {
    throw Error(ErrorKind::Protocol, "wrong number of fields for " + std::string(to_string(msg.kind)));
  }
  std::string out(to_string(msg.kind));
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const WireField& f = msg.fields[i];
    if (f.key != expected[i].key || !detail::type_matches(f.value, expected[i].type)) {
      throw Error(ErrorKind::Protocol, "field '" + f.key + "' out of schema for " + std::string(to_string(msg.kind)));
    }
    out += ' ';
    out += f.key;
    out += '=';
    if (const auto* i64 = std::get_if<std::int64_t>(&f.value)) {
      out += std::to_string(*i64);
    } else if (const auto* d = std::get_if<double>(&f.value)) {
      if (!std::isfinite(*d)) throw Error(ErrorKind::Protocol, "non-finite value for '" + f.key + "'");
      out += sim::format_double(*d);
    } else {
      const auto& tok = std::get<Token>(f.value).text;
      if (!detail::valid_token(tok)) throw Error(ErrorKind::Protocol, "bad token for '" + f.key + "'");
      out += tok;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoding

/// Strict parse of one line (without its LF).
inline WireMessage decode(std::string_view line) {
  if (line.empty()) throw Error(ErrorKind::Protocol, "empty line", 0);
  struct Raw {
    std::string_view key;
    std::string_view value;
    std::size_t offset;
  };
  std::vector<Raw> raw;
  std::size_t pos = line.find(' ');
  const std::string_view kind_text = line.substr(0, pos);
  WireMessage msg;
  bool known = false;
  for (auto k : {MessageKind::Hello, MessageKind::Task, MessageKind::Summary, MessageKind::Error, MessageKind::Bye}) {
    if (to_string(k) == kind_text) {
      msg.kind = k;
      known = true;
    }
  }
  if (!known) throw Error(ErrorKind::Protocol, "unknown message kind '" + std::string(kind_text) + "'", 0);

  while (pos != std::string_view::npos) {
    const std::size_t start = pos + 1;
    pos = line.find(' ', start);
    const std::string_view tok = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
    const std::size_t eq = tok.find('=');
    if (tok.empty() || eq == std::string_view::npos || eq == 0 || eq + 1 == tok.size()) {
      throw Error(ErrorKind::Protocol, "malformed field '" + std::string(tok) + "'", start);
    }
    raw.push_back({tok.substr(0, eq), tok.substr(eq + 1), start});
  }

  // Key vocabulary and duplicates.
  std::set<std::string_view> seen;
  const auto all_meta = detail::expected_fields(msg.kind, std::nullopt);
  for (const Raw& r : raw) {
    bool in_vocab = false;
    for (const auto& spec : all_meta) in_vocab = in_vocab || spec.key == r.key;
    if (msg.kind == MessageKind::Summary) in_vocab = in_vocab || schema::is_statistic(r.key);
    if (!in_vocab) throw Error(ErrorKind::Protocol, "unknown key '" + std::string(r.key) + "'", r.offset);
    if (!seen.insert(r.key).second) throw Error(ErrorKind::Protocol, "duplicate key '" + std::string(r.key) + "'", r.offset);
  }

  std::optional<TransmissionMode> mode;
  if (msg.kind == MessageKind::Summary) {
    for (const Raw& r : raw) {
      if (r.key == "mode") {
        try {
          mode = transmission_mode_from_string(r.value);
        } catch (const Error&) {
          throw Error(ErrorKind::Protocol, "unknown mode '" + std::string(r.value) + "'", r.offset);
        }
      }
    }
    if (!mode) throw Error(ErrorKind::Protocol, "summary without mode", line.size());
    // Budget: no statistic outside the mode and no more than the mode allows.
    const auto allowed = schema::statistics_for(*mode);
    std::size_t stats = 0;
    for (const Raw& r : raw) {
      if (!schema::is_statistic(r.key)) continue;
      ++stats;
      if (std::find(allowed.begin(), allowed.end(), r.key) == allowed.end()) {
        throw Error(ErrorKind::BudgetViolation,
                    "statistic '" + std::string(r.key) + "' not allowed in mode " + std::string(dhill::to_string(*mode)),
                    r.offset);
      }
    }
    if (stats > allowed.size()) {
      throw Error(ErrorKind::BudgetViolation, "summary carries " + std::to_string(stats) + " statistics, mode allows " +
                                                  std::to_string(allowed.size()),
                  0);
    }
  }

  const auto expected = detail::expected_fields(msg.kind, mode);
  for (std::size_t i = 0; i < expected.size(); ++i) {
    if (i >= raw.size()) {
      throw Error(ErrorKind::Protocol, "truncated message: missing '" + std::string(expected[i].key) + "'", line.size());
    }
    const Raw& r = raw[i];
    if (r.key != expected[i].key) {
      throw Error(ErrorKind::Protocol, "expected key '" + std::string(expected[i].key) + "'", r.offset);
    }
    const std::size_t value_offset = r.offset + r.key.size() + 1;
    WireField f{std::string(r.key), std::int64_t{0}};
    switch (expected[i].type) {
      case FieldType::Int: {
        std::int64_t v = 0;
        auto res = std::from_chars(r.value.data(), r.value.data() + r.value.size(), v);
        if (res.ec != std::errc() || res.ptr != r.value.data() + r.value.size()) {
          throw Error(ErrorKind::Protocol, "bad integer for '" + std::string(r.key) + "'", value_offset);
        }
        f.value = v;
        break;
      }
      case FieldType::Float: {
        auto v = sim::parse_double(r.value);
        if (!v || !std::isfinite(*v)) {
          throw Error(ErrorKind::Protocol, "bad float for '" + std::string(r.key) + "'", value_offset);
        }
        f.value = *v;
        break;
      }
      case FieldType::Tok:
        if (!detail::valid_token(r.value)) {
          throw Error(ErrorKind::Protocol, "bad token for '" + std::string(r.key) + "'", value_offset);
        }
        f.value = Token{std::string(r.value)};
        break;
    }
    msg.fields.push_back(std::move(f));
  }
  if (raw.size() > expected.size()) {
    throw Error(ErrorKind::Protocol, "unexpected trailing field", raw[expected.size()].offset);
  }
  return msg;
}

// ---------------------------------------------------------------------------
// Typed messages

struct TaskSpec {
  int machine_id = 0;
  TransmissionMode mode = TransmissionMode::FiveStat;
  std::size_t k_n = 0;
  std::size_t k_rho = 0;
  double tau = 0.0;
  RhoPolicy policy = RhoPolicy::Strict;

  bool operator==(const TaskSpec&) const = default;
};

namespace detail {

inline std::int64_t as_int(const WireMessage& m, std::string_view key) {
  const FieldValue* v = m.get(key);
  if (!v || !std::holds_alternative<std::int64_t>(*v)) throw Error(ErrorKind::Protocol, "missing '" + std::string(key) + "'");
  return std::get<std::int64_t>(*v);
}

inline double as_float(const WireMessage& m, std::string_view key) {
  const FieldValue* v = m.get(key);
  if (!v || !std::holds_alternative<double>(*v)) throw Error(ErrorKind::Protocol, "missing '" + std::string(key) + "'");
  return std::get<double>(*v);
}

inline const std::string& as_token(const WireMessage& m, std::string_view key) {
  const FieldValue* v = m.get(key);
  if (!v || !std::holds_alternative<Token>(*v)) throw Error(ErrorKind::Protocol, "missing '" + std::string(key) + "'");
  return std::get<Token>(*v).text;
}

inline std::size_t as_count(const WireMessage& m, std::string_view key) {
  const std::int64_t v = as_int(m, key);
  if (v < 0) throw Error(ErrorKind::Protocol, "negative '" + std::string(key) + "'");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline WireMessage hello_message() { return {MessageKind::Hello, {{"version", kProtocolVersion}}}; }
inline WireMessage bye_message() { return {MessageKind::Bye, {}}; }

inline WireMessage to_wire(const TaskSpec& t) {
  return {MessageKind::Task,
          {{"machine_id", std::int64_t{t.machine_id}},
           {"mode", Token{std::string(dhill::to_string(t.mode))}},
           {"k_n", static_cast<std::int64_t>(t.k_n)},
           {"k_rho", static_cast<std::int64_t>(t.k_rho)},
           {"tau", t.tau},
           {"policy", Token{std::string(dhill::to_string(t.policy))}}}};
}

inline TaskSpec task_from_wire(const WireMessage& m) {
  if (m.kind != MessageKind::Task) throw Error(ErrorKind::Protocol, "expected TASK");
  TaskSpec t;
  t.machine_id = static_cast<int>(detail::as_int(m, "machine_id"));
  try {
    t.mode = transmission_mode_from_string(detail::as_token(m, "mode"));
    t.policy = rho_policy_from_string(detail::as_token(m, "policy"));
  } catch (const Error& e) {
    throw Error(ErrorKind::Protocol, e.what());
  }
  t.k_n = detail::as_count(m, "k_n");
  t.k_rho = detail::as_count(m, "k_rho");
  t.tau = detail::as_float(m, "tau");
  return t;
}

inline WireMessage to_wire(const WorkerSummary& s) {
  if (!s.matches_mode()) throw Error(ErrorKind::BudgetViolation, "summary fields do not match its mode");
  WireMessage m{MessageKind::Summary,
                {{"machine_id", std::int64_t{s.machine_id}},
                 {"mode", Token{std::string(dhill::to_string(s.mode))}},
                 {"n", static_cast<std::int64_t>(s.n)},
                 {"k_n", static_cast<std::int64_t>(s.k_n)},
                 {"k_rho", static_cast<std::int64_t>(s.k_rho)}}};
  auto field_of = [&](std::string_view key) -> const std::optional<double>& {
    if (key == "r1_kn") return s.r1_kn;
    if (key == "r2_kn") return s.r2_kn;
    if (key == "r1_krho") return s.r1_krho;
    if (key == "r2_krho") return s.r2_krho;
    if (key == "r3_krho") return s.r3_krho;
    if (key == "threshold") return s.threshold;
    if (key == "local_rho") return s.local_rho;
    return s.local_gamma;
  };
  for (auto key : schema::statistics_for(s.mode)) m.fields.push_back({std::string(key), *field_of(key)});
  return m;
}

inline WorkerSummary summary_from_wire(const WireMessage& m) {
  if (m.kind != MessageKind::Summary) throw Error(ErrorKind::Protocol, "expected SUMMARY");
  WorkerSummary s;
  s.machine_id = static_cast<int>(detail::as_int(m, "machine_id"));
  s.mode = transmission_mode_from_string(detail::as_token(m, "mode"));
  s.n = detail::as_count(m, "n");
  s.k_n = detail::as_count(m, "k_n");
  s.k_rho = detail::as_count(m, "k_rho");
  for (auto key : schema::statistics_for(s.mode)) {
    const double v = detail::as_float(m, key);
    if (key == "r1_kn") s.r1_kn = v;
    else if (key == "r2_kn") s.r2_kn = v;
    else if (key == "r1_krho") s.r1_krho = v;
    else if (key == "r2_krho") s.r2_krho = v;
    else if (key == "r3_krho") s.r3_krho = v;
    else if (key == "threshold") s.threshold = v;
    else if (key == "local_rho") s.local_rho = v;
    else s.local_gamma = v;
  }
  return s;
}

inline WireMessage error_message(int machine_id, ErrorKind kind) {
  return {MessageKind::Error,
          {{"machine_id", std::int64_t{machine_id}}, {"kind", Token{std::string(dhill::to_string(kind))}}}};
}

/// Number of statistics in an encoded SUMMARY line; nullopt for other kinds.
inline std::optional<std::size_t> audit_statistic_count(std::string_view line) {
  const WireMessage m = decode(line);
  if (m.kind != MessageKind::Summary) return std::nullopt;
  std::size_t n = 0;
  for (const auto& f : m.fields) n += schema::is_statistic(f.key) ? 1 : 0;
  return n;
}

// ---------------------------------------------------------------------------
// Byte streams

/// A line-oriented duplex channel over file descriptors. Owns the descriptors
/// and, for spawned workers, the child process.
class LineChannel {
 public:
  LineChannel(int read_fd, int write_fd, pid_t child = -1) : read_fd_(read_fd), write_fd_(write_fd), child_(child) {}

  LineChannel(const LineChannel&) = delete;
  LineChannel& operator=(const LineChannel&) = delete;
  LineChannel(LineChannel&& o) noexcept { *this = std::move(o); }
  LineChannel& operator=(LineChannel&& o) noexcept {
    if (this != &o) {
      close_all();
      read_fd_ = std::exchange(o.read_fd_, -1);
      write_fd_ = std::exchange(o.write_fd_, -1);
      child_ = std::exchange(o.child_, -1);
      buffer_ = std::move(o.buffer_);
    }
    return *this;
  }
  ~LineChannel() { close_all(); }

  void write_line(std::string_view line) {
    std::string data(line);
    data += '\n';
    std::size_t done = 0;
    while (done < data.size()) {
      const ssize_t w = ::write(write_fd_, data.data() + done, data.size() - done);
      if (w < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::Io, std::string("write failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(w);
    }
  }

  /// Next line without its LF; nullopt once the peer has closed.
  std::optional<std::string> read_line() {
    for (;;) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      char chunk[4096];
      const ssize_t r = ::read(read_fd_, chunk, sizeof(chunk));
      if (r < 0) {
        if (errno == EINTR) continue;
        throw Error(ErrorKind::Io, std::string("read failed: ") + std::strerror(errno));
      }
      if (r == 0) return std::nullopt;
      buffer_.append(chunk, static_cast<std::size_t>(r));
    }
  }

  void send(const WireMessage& m) { write_line(encode(m)); }

  /// Reads and decodes one message; a closed peer is a session error.
  WireMessage receive() {
    auto line = read_line();
    if (!line) throw Error(ErrorKind::Session, "connection closed by peer");
    return decode(*line);
  }

 private:
  void close_all() {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
    if (child_ > 0) {
      int status = 0;
      while (::waitpid(child_, &status, 0) < 0 && errno == EINTR) {
      }
      child_ = -1;
    }
  }

  int read_fd_ = -1;
  int write_fd_ = -1;
  pid_t child_ = -1;
  std::string buffer_;
};

inline void ignore_sigpipe() { std::signal(SIGPIPE, SIG_IGN); }

/// Runs `command` under /bin/sh with its stdin/stdout connected to the channel.
inline LineChannel spawn_process(const std::string& command) {
  ignore_sigpipe();
  int to_child[2];
  int from_child[2];
  // close-on-exec so that sibling workers do not hold each other's pipes open
  if (::pipe2(to_child, O_CLOEXEC) != 0) throw Error(ErrorKind::Io, "pipe failed");
  if (::pipe2(from_child, O_CLOEXEC) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorKind::Io, "pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw Error(ErrorKind::Io, "fork failed");
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  return LineChannel(from_child[0], to_child[1], pid);
}

struct HostPort {
  std::string host;
  std::string port;
};

inline HostPort parse_host_port(std::string_view endpoint) {
  if (endpoint.starts_with("tcp:")) endpoint.remove_prefix(4);
  const auto colon = endpoint.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == endpoint.size()) {
    throw Error(ErrorKind::Config, "endpoint must look like host:port, got '" + std::string(endpoint) + "'");
  }
  return {std::string(endpoint.substr(0, colon)), std::string(endpoint.substr(colon + 1))};
}

inline LineChannel connect_tcp(std::string_view endpoint) {
  ignore_sigpipe();
  const HostPort hp = parse_host_port(endpoint);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0) {
    throw Error(ErrorKind::Session, "cannot resolve " + std::string(endpoint));
  }
  std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
  for (addrinfo* p = res; p; p = p->ai_next) {
    const int fd = ::socket(p->ai_family, p->ai_socktype | SOCK_CLOEXEC, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) return LineChannel(fd, fd);
    ::close(fd);
  }
  throw Error(ErrorKind::Session, "cannot connect to " + std::string(endpoint));
}

/// A bound, listening TCP socket.
class TcpListener {
 public:
  explicit TcpListener(std::string_view endpoint) {
    ignore_sigpipe();
    const HostPort hp = parse_host_port(endpoint);
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    if (::getaddrinfo(hp.host.c_str(), hp.port.c_str(), &hints, &res) != 0) {
      throw Error(ErrorKind::Config, "cannot resolve " + std::string(endpoint));
    }
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> guard(res, ::freeaddrinfo);
    fd_ = ::socket(res->ai_family, res->ai_socktype | SOCK_CLOEXEC, res->ai_protocol);
    if (fd_ < 0) throw Error(ErrorKind::Io, "socket failed");
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    if (::bind(fd_, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd_, 4) != 0) {
      ::close(fd_);
      throw Error(ErrorKind::Io, "cannot listen on " + std::string(endpoint) + ": " + std::strerror(errno));
    }
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    char buf[INET_ADDRSTRLEN] = {};
    ::inet_ntop(AF_INET, &addr.sin_addr, buf, sizeof(buf));
    bound_ = std::string(buf) + ":" + std::to_string(ntohs(addr.sin_port));
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  /// The actual host:port (resolves port 0).
  const std::string& endpoint() const noexcept { return bound_; }

  LineChannel accept() {
    for (;;) {
      const int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (c >= 0) return LineChannel(c, c);
      if (errno != EINTR) throw Error(ErrorKind::Io, "accept failed");
    }
  }

 private:
  int fd_ = -1;
  std::string bound_;
};

/// Opens a coordinator-side channel: `exec:<command>` spawns a worker process
/// talking over its stdin/stdout, anything else is a TCP host:port.
inline LineChannel open_endpoint(std::string_view endpoint) {
  if (endpoint.starts_with("exec:")) return spawn_process(std::string(endpoint.substr(5)));
  return connect_tcp(endpoint);
}

// ---------------------------------------------------------------------------
// Worker and coordinator

/// Answers HELLO with HELLO, each TASK with one SUMMARY (or ERROR), and stops
/// after replying to BYE (returns true) or when the peer disconnects (false).
/// Only the summary of the task's mode ever leaves this function.
inline bool worker_serve(const Shard& shard, LineChannel& channel) {
  for (;;) {
    auto line = channel.read_line();
    if (!line) return false;
    WireMessage msg;
    try {
      msg = decode(*line);
    } catch (const Error& e) {
      channel.send(error_message(0, e.kind()));
      continue;
    }
    switch (msg.kind) {
      case MessageKind::Hello:
        channel.send(hello_message());
        break;
      case MessageKind::Task: {
        int machine_id = 0;
        try {
          const TaskSpec task = task_from_wire(msg);
          machine_id = task.machine_id;
          const Shard view(task.machine_id, shard.values());
          channel.send(to_wire(make_summary(view, task.k_n, task.k_rho, task.tau, task.mode, task.policy)));
        } catch (const Error& e) {
          channel.send(error_message(machine_id, e.kind()));
        }
        break;
      }
      case MessageKind::Bye:
        channel.send(bye_message());
        return true;
      case MessageKind::Summary:
      case MessageKind::Error:
        channel.send(error_message(0, ErrorKind::Protocol));
        break;
    }
  }
}

struct SessionConfig {
  EstimatorConfig estimator;
  std::optional<double> p_N;
  bool allow_partial = false;
};

struct CoordinateResult {
  EstimateReport report;
  std::vector<WorkerSummary> summaries;
  std::vector<std::string> summary_lines;
  std::size_t statistic_scalars = 0;
};

/// Opens every worker, broadcasts one TASK per worker (machine_id = position
/// in `endpoints`, 1-based), collects the summaries, then aggregates.
inline CoordinateResult coordinate(const SessionConfig& session, const std::vector<std::string>& endpoints) {
  session.estimator.validate();
  if (endpoints.empty()) throw Error(ErrorKind::Config, "no worker endpoints");

  struct Peer {
    std::string endpoint;
    int machine_id;
    std::optional<LineChannel> channel;
  };
  std::vector<Peer> peers;
  std::vector<std::string> dropped;
  auto fail = [&](const Peer& p, const std::string& why) {
    if (!session.allow_partial) throw Error(ErrorKind::Session, "worker " + p.endpoint + ": " + why);
    dropped.push_back("worker_dropped:" + std::to_string(p.machine_id) + ":" + why);
  };

  for (std::size_t i = 0; i < endpoints.size(); ++i) {
    Peer p{endpoints[i], static_cast<int>(i + 1), std::nullopt};
    try {
      p.channel.emplace(open_endpoint(p.endpoint));
      p.channel->send(hello_message());
      TaskSpec task{p.machine_id, session.estimator.mode, session.estimator.k_n, session.estimator.k_rho,
                    session.estimator.tau, session.estimator.rho_policy};
      p.channel->send(to_wire(task));
    } catch (const Error& e) {
      p.channel.reset();
      fail(p, std::string(dhill::to_string(e.kind())));
    }
    peers.push_back(std::move(p));
  }

  CoordinateResult result;
  for (Peer& p : peers) {
    if (!p.channel) continue;
    try {
      const WireMessage hello = p.channel->receive();
      if (hello.kind != MessageKind::Hello) throw Error(ErrorKind::Protocol, "expected HELLO");
      auto line = p.channel->read_line();
      if (!line) throw Error(ErrorKind::Session, "connection closed by peer");
      const WireMessage reply = decode(*line);
      if (reply.kind == MessageKind::Error) {
        throw Error(ErrorKind::Session, "worker reported " + detail::as_token(reply, "kind"));
      }
      WorkerSummary s = summary_from_wire(reply);
      if (s.machine_id != p.machine_id) throw Error(ErrorKind::Protocol, "summary for the wrong machine_id");
      result.statistic_scalars += s.statistic_count();
      result.summary_lines.push_back(*line);
      result.summaries.push_back(std::move(s));
      p.channel->send(bye_message());
      p.channel->read_line();
    } catch (const Error& e) {
      p.channel.reset();
      fail(p, e.what());
    }
  }
  for (Peer& p : peers) p.channel.reset();

  if (result.summaries.empty()) throw Error(ErrorKind::Session, "no worker delivered a summary");
  std::sort(result.summaries.begin(), result.summaries.end(),
            [](const WorkerSummary& a, const WorkerSummary& b) { return a.machine_id < b.machine_id; });
  result.report = estimate(result.summaries, session.estimator, session.p_N);
  for (auto& d : dropped) result.report.diagnostics.push_back(std::move(d));
  return result;
}

}  // namespace dhill::transport
