#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace seqtriage {

enum class ErrorCode {
  validation,
  dimension_mismatch,
  consistency,
  degenerate_data,
  schema,
  io,
  not_found,
  conflict,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a machine-readable code plus an
// optional detail string (row id, stage number, offending field).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {});

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace seqtriage
