#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uat {

enum class ErrorCode {
  kInvalidArgument,
  kShapeMismatch,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kCorruptHeader,
  kDivergence,
  kEmptyInput,
  kNoCorrectExamples,
  kZeroNorm,
  kConfig,
  kMissingFile,
  kIo,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace uat
