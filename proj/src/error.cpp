#include "pivotal/error.hpp"

namespace pivotal {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::empty_input: return "empty_input";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::role_violation: return "role_violation";
    case ErrorCode::config: return "config";
    case ErrorCode::numerical: return "numerical";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::optional<std::size_t> index)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      index_(index) {}

}  // namespace pivotal
