#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>

namespace ffoa {

enum class ErrorKind {
  invalid_argument,
  parse,
  missing_field,
  out_of_range,
  duplicate,
  infeasible,
  empty_input,
  io,
  transport,
  protocol,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::parse: return "parse_error";
    case ErrorKind::missing_field: return "missing_field";
    case ErrorKind::out_of_range: return "out_of_range";
    case ErrorKind::duplicate: return "duplicate";
    case ErrorKind::infeasible: return "infeasible";
    case ErrorKind::empty_input: return "empty_input";
    case ErrorKind::io: return "io_error";
    case ErrorKind::transport: return "transport_error";
    case ErrorKind::protocol: return "protocol_error";
  }
  return "unknown";
}

// Every failure in the library surfaces as this exception. `field` names the
// offending field or parameter when there is one; `line` is 1-based.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string field = {},
        std::optional<std::size_t> line = std::nullopt)
      : std::runtime_error(message), kind_(kind), field_(std::move(field)), line_(line) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorKind kind_;
  std::string field_;
  std::optional<std::size_t> line_;
};

namespace detail {

inline void require(bool condition, ErrorKind kind, const std::string& message,
                    const std::string& field = {}) {
  if (!condition) throw Error(kind, message, field);
}

}  // namespace detail

}  // namespace ffoa
