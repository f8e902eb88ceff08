#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace taxexp {

enum class ErrorCode {
  kCycleDetected,
  kMultipleRoots,
  kNoRoot,
  kDuplicateName,
  kUnknownNode,
  kEmptyTaxonomy,
  kInvalidArgument,
  kDimensionMismatch,
  kDisjointPaths,
  kTaxonomyTooSmall,
  kNonFiniteLoss,
  kInvalidChunkSize,
  kMisalignedInputs,
  kTemplateError,
  kTimeout,
  kHttpError,
  kMalformedResponse,
  kRetriesExhausted,
  kBackendLacksLogprobs,
  kConfigError,
  kIoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kCycleDetected: return "CycleDetected";
    case ErrorCode::kMultipleRoots: return "MultipleRoots";
    case ErrorCode::kNoRoot: return "NoRoot";
    case ErrorCode::kDuplicateName: return "DuplicateName";
    case ErrorCode::kUnknownNode: return "UnknownNode";
    case ErrorCode::kEmptyTaxonomy: return "EmptyTaxonomy";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kDisjointPaths: return "DisjointPaths";
    case ErrorCode::kTaxonomyTooSmall: return "TaxonomyTooSmall";
    case ErrorCode::kNonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::kInvalidChunkSize: return "InvalidChunkSize";
    case ErrorCode::kMisalignedInputs: return "MisalignedInputs";
    case ErrorCode::kTemplateError: return "TemplateError";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kHttpError: return "HttpError";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kRetriesExhausted: return "RetriesExhausted";
    case ErrorCode::kBackendLacksLogprobs: return "BackendLacksLogprobs";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

// Backend failures are the only errors a pipeline run may isolate per query.
constexpr bool is_backend_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::kTimeout:
    case ErrorCode::kHttpError:
    case ErrorCode::kMalformedResponse:
    case ErrorCode::kRetriesExhausted:
    case ErrorCode::kBackendLacksLogprobs:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, int http_status = 0)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        message_(message),
        http_status_(http_status) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& message() const noexcept { return message_; }
  // Only meaningful for kHttpError / kRetriesExhausted.
  int http_status() const noexcept { return http_status_; }

 private:
  ErrorCode code_;
  std::string message_;
  int http_status_;
};

}  // namespace taxexp
