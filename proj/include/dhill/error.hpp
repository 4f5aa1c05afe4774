#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace dhill {

enum class ErrorKind {
  Domain,
  Bounds,
  DegenerateT,
  RhoDegenerate,
  Lookup,
  Arity,
  Mode,
  Protocol,
  BudgetViolation,
  Config,
  Io,
  Session,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Bounds: return "bounds";
    case ErrorKind::DegenerateT: return "degenerate_t";
    case ErrorKind::RhoDegenerate: return "rho_degenerate";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Arity: return "arity";
    case ErrorKind::Mode: return "mode";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::BudgetViolation: return "budget_violation";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Session: return "session";
  }
  return "unknown";
}

inline std::optional<ErrorKind> error_kind_from_string(std::string_view s) {
  for (auto k : {ErrorKind::Domain, ErrorKind::Bounds, ErrorKind::DegenerateT,
                 ErrorKind::RhoDegenerate, ErrorKind::Lookup, ErrorKind::Arity,
                 ErrorKind::Mode, ErrorKind::Protocol, ErrorKind::BudgetViolation,
                 ErrorKind::Config, ErrorKind::Io, ErrorKind::Session}) {
    if (to_string(k) == s) return k;
  }
  return std::nullopt;
}

// Single exception type for the library; callers dispatch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  Error(ErrorKind kind, const std::string& what, std::size_t byte_offset)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what + " (at byte " +
                           std::to_string(byte_offset) + ")"),
        kind_(kind),
        offset_(byte_offset) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::optional<std::size_t> byte_offset() const noexcept { return offset_; }

  // True for the statistical degeneracies a rho policy may absorb.
  bool is_degenerate() const noexcept {
    return kind_ == ErrorKind::DegenerateT || kind_ == ErrorKind::RhoDegenerate;
  }

 private:
  ErrorKind kind_;
  std::optional<std::size_t> offset_;
};

}  // namespace dhill
