#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace revchain {

enum class ErrorKind {
  invalid_input,
  parse_error,
  schema_error,
  transport_error,
  generation_error,
  bounds_error,
  empty_span_error,
  taxonomy_error,
  undefined_error,
  matrix_error,
  nesting_error,
  step_count_error,
  tag_error,
  nothing_to_rewrite,
  chain_failure,
  rejected_chain,
  io_error,
  numeric_error,
  empty_batch,
  config_error,
  identifiability_error,
  bootstrap_failure,
  exhausted,
  ownership_error,
  incomplete_error,
  nothing_to_do,
  not_found,
};

constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_input: return "invalid-input";
    case ErrorKind::parse_error: return "parse-error";
    case ErrorKind::schema_error: return "schema-error";
    case ErrorKind::transport_error: return "transport-error";
    case ErrorKind::generation_error: return "generation-error";
    case ErrorKind::bounds_error: return "bounds-error";
    case ErrorKind::empty_span_error: return "empty-span-error";
    case ErrorKind::taxonomy_error: return "taxonomy-error";
    case ErrorKind::undefined_error: return "undefined-error";
    case ErrorKind::matrix_error: return "matrix-error";
    case ErrorKind::nesting_error: return "nesting-error";
    case ErrorKind::step_count_error: return "step-count-error";
    case ErrorKind::tag_error: return "tag-error";
    case ErrorKind::nothing_to_rewrite: return "nothing-to-rewrite";
    case ErrorKind::chain_failure: return "chain-failure";
    case ErrorKind::rejected_chain: return "rejected-chain";
    case ErrorKind::io_error: return "io-error";
    case ErrorKind::numeric_error: return "numeric-error";
    case ErrorKind::empty_batch: return "empty-batch";
    case ErrorKind::config_error: return "config-error";
    case ErrorKind::identifiability_error: return "identifiability-error";
    case ErrorKind::bootstrap_failure: return "bootstrap-failure";
    case ErrorKind::exhausted: return "exhausted";
    case ErrorKind::ownership_error: return "ownership-error";
    case ErrorKind::incomplete_error: return "incomplete-error";
    case ErrorKind::nothing_to_do: return "nothing-to-do";
    case ErrorKind::not_found: return "not-found";
  }
  return "unknown";
}

// Every failure raised by the library carries a machine-readable kind; the
// service layer maps kinds onto HTTP status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class TransportError : public Error {
 public:
  TransportError(const std::string& message, int attempts)
      : Error(ErrorKind::transport_error,
              message + " (after " + std::to_string(attempts) + " attempt" +
                  (attempts == 1 ? "" : "s") + ")"),
        attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

}  // namespace revchain
