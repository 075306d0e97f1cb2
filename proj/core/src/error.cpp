#include "uat/error.hpp"

namespace uat {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kBadMagic: return "bad_magic";
    case ErrorCode::kVersionMismatch: return "version_mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kCorruptHeader: return "corrupt_header";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kEmptyInput: return "empty_input";
    case ErrorCode::kNoCorrectExamples: return "no_correct_examples";
    case ErrorCode::kZeroNorm: return "zero_norm";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kMissingFile: return "missing_file";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

}  // namespace uat
