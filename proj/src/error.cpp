#include "cosmovae/error.hpp"

namespace cosmovae {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kIo: return "i/o failure";
    case ErrorCode::kMalformedHeader: return "malformed header";
    case ErrorCode::kLengthMismatch: return "length mismatch";
    case ErrorCode::kNonBinaryMask: return "non-binary mask";
    case ErrorCode::kNonFiniteValue: return "non-finite value";
    case ErrorCode::kGeometryMismatch: return "geometry mismatch";
    case ErrorCode::kEmptyGrid: return "empty grid";
    case ErrorCode::kPoleCrossing: return "patch crosses a pole";
    case ErrorCode::kUnknownPatch: return "unknown patch id";
    case ErrorCode::kDegenerateNormalization: return "degenerate normalization";
    case ErrorCode::kEllMaxTooLarge: return "ell_max too large";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kIndivisibleInput: return "indivisible input size";
    case ErrorCode::kNonFiniteGradient: return "non-finite gradient";
    case ErrorCode::kNonFiniteLoss: return "non-finite loss";
    case ErrorCode::kEmptyMaskPool: return "empty mask pool";
    case ErrorCode::kCorruptArchive: return "corrupt archive";
    case ErrorCode::kConfig: return "configuration error";
  }
  return "unknown error";
}

}  // namespace cosmovae
