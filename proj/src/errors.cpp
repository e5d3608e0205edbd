#include "seqtriage/errors.hpp"

#include <utility>

namespace seqtriage {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::validation: return "validation";
    case ErrorCode::dimension_mismatch: return "dimension_mismatch";
    case ErrorCode::consistency: return "consistency";
    case ErrorCode::degenerate_data: return "degenerate_data";
    case ErrorCode::schema: return "schema";
    case ErrorCode::io: return "io";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::conflict: return "conflict";
  }
  return "unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::string detail)
    : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

}  // namespace seqtriage
