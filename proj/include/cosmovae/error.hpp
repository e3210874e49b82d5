#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cosmovae {

/// Machine-readable failure category carried by every library exception.
enum class ErrorCode {
  kInvalidArgument,
  kIo,
  kMalformedHeader,
  kLengthMismatch,
  kNonBinaryMask,
  kNonFiniteValue,
  kGeometryMismatch,
  kEmptyGrid,
  kPoleCrossing,
  kUnknownPatch,
  kDegenerateNormalization,
  kEllMaxTooLarge,
  kShapeMismatch,
  kIndivisibleInput,
  kNonFiniteGradient,
  kNonFiniteLoss,
  kEmptyMaskPool,
  kCorruptArchive,
  kConfig,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace cosmovae
