#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dedupacq {

// The order is part of the wire protocol (ERROR code = position + 1); append only.
enum class ErrorCode {
  OutOfBounds,
  NotAnMbr,
  CorruptPartitionTable,
  CorruptBootSector,
  CorruptVolume,
  CorruptChain,
  TruncatedFile,
  UnsupportedVariant,
  CapacityError,
  InvalidFixture,
  EmptyInput,
  InvalidManifest,
  BatchTooLarge,
  DigestMismatch,
  StorageError,
  NotFound,
  DanglingDigest,
  ProtocolError,
  FrameTooShort,
  FrameTooLarge,
  UnsupportedVersion,
  Unreachable,
  ResumableFailure,
  VerificationFailed,
  Ambiguous,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library. `details` carries structured
// payload where the caller needs it (missing digests, ambiguous matches).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::vector<std::string> details = {})
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code),
        details_(std::move(details)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::vector<std::string>& details() const noexcept { return details_; }

 private:
  ErrorCode code_;
  std::vector<std::string> details_;
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::NotAnMbr: return "NotAnMbr";
    case ErrorCode::CorruptPartitionTable: return "CorruptPartitionTable";
    case ErrorCode::CorruptBootSector: return "CorruptBootSector";
    case ErrorCode::CorruptVolume: return "CorruptVolume";
    case ErrorCode::CorruptChain: return "CorruptChain";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::UnsupportedVariant: return "UnsupportedVariant";
    case ErrorCode::CapacityError: return "CapacityError";
    case ErrorCode::InvalidFixture: return "InvalidFixture";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::InvalidManifest: return "InvalidManifest";
    case ErrorCode::BatchTooLarge: return "BatchTooLarge";
    case ErrorCode::DigestMismatch: return "DigestMismatch";
    case ErrorCode::StorageError: return "StorageError";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::DanglingDigest: return "DanglingDigest";
    case ErrorCode::ProtocolError: return "ProtocolError";
    case ErrorCode::FrameTooShort: return "FrameTooShort";
    case ErrorCode::FrameTooLarge: return "FrameTooLarge";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::ResumableFailure: return "ResumableFailure";
    case ErrorCode::VerificationFailed: return "VerificationFailed";
    case ErrorCode::Ambiguous: return "Ambiguous";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace dedupacq
