#include "stainlab/error.hpp"

namespace stainlab {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::InsufficientTissue: return "InsufficientTissue";
    case ErrorCode::DegenerateStain: return "DegenerateStain";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::MissingAugmentation: return "MissingAugmentation";
    case ErrorCode::MissingStainTarget: return "MissingStainTarget";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::DataMissing: return "DataMissing";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
  }
  return "Unknown";
}

}  // namespace stainlab
