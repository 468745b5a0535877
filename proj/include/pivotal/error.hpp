#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pivotal {

enum class ErrorCode {
  invalid_argument,
  dimension_mismatch,
  non_finite,
  empty_input,
  unsupported,
  role_violation,
  config,
  numerical,
  io,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Structured failure raised by every library entry point.
///
/// `index()` carries the offending position when one exists (a parameter
/// index for the optimizer, an epoch for training, a bin id for diagnostics).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> index = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> index() const noexcept { return index_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> index_;
};

#define PIVOTAL_REQUIRE(cond, code, msg)          \
  do {                                            \
    if (!(cond)) throw ::pivotal::Error((code), (msg)); \
  } while (0)

}  // namespace pivotal
