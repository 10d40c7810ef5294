#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cweave {

enum class ErrorCode {
  validation,
  not_found,
  duplicate_id,
  conflict,
  clock_regression,
  io,
  checksum_mismatch,
  dimension_mismatch,
  zero_vector,
  empty_index,
  empty_input,
  inverted_range,
  stale_value,
  out_of_range,
  self_loop,
  derived_from_target_not_ia,
  not_an_ia,
  too_few_constituents,
  embedder_mismatch,
  oracle_transport,
  oracle_status,
  oracle_schema,
  oracle_rate_limited,
  oracle_retry_exhausted,
  write_lock_timeout,
  config,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every engine failure is reported as an Error carrying a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

  [[nodiscard]] bool is_oracle_failure() const noexcept {
    return code_ == ErrorCode::oracle_transport || code_ == ErrorCode::oracle_status ||
           code_ == ErrorCode::oracle_schema || code_ == ErrorCode::oracle_rate_limited ||
           code_ == ErrorCode::oracle_retry_exhausted;
  }

 private:
  ErrorCode code_;
};

}  // namespace cweave
