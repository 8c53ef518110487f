#include "invcode/error.hpp"

namespace invcode {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidShape: return "InvalidShape";
    case ErrorCode::ValidationFailed: return "ValidationFailed";
    case ErrorCode::SingularSubset: return "SingularSubset";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::DuplicateTask: return "DuplicateTask";
    case ErrorCode::Undecodable: return "Undecodable";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace invcode
