// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace topopt {

/// Machine-readable failure categories. The CLI prints the category name on
/// stderr and maps it to a nonzero exit status.
enum class ErrorKind {
  InvalidArgument,
  SingularSystem,
  NoConvergence,
  BisectionFailure,
  SamplingExhausted,
  NonSquareDomain,
  DegenerateTet,
  EmptyMesh,
  ShapeMismatch,
  DegenerateBatch,
  IndivisibleResolution,
  DatasetTooSmall,
  MissingWeights,
  DegenerateSeries,
  CorruptHeader,
  VersionMismatch,
  TruncatedFile,
  IoError,
};

constexpr std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::NoConvergence: return "NoConvergence";
    case ErrorKind::BisectionFailure: return "BisectionFailure";
    case ErrorKind::SamplingExhausted: return "SamplingExhausted";
    case ErrorKind::NonSquareDomain: return "NonSquareDomain";
    case ErrorKind::DegenerateTet: return "DegenerateTet";
    case ErrorKind::EmptyMesh: return "EmptyMesh";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::DegenerateBatch: return "DegenerateBatch";
    case ErrorKind::IndivisibleResolution: return "IndivisibleResolution";
    case ErrorKind::DatasetTooSmall: return "DatasetTooSmall";
    case ErrorKind::MissingWeights: return "MissingWeights";
    case ErrorKind::DegenerateSeries: return "DegenerateSeries";
    case ErrorKind::CorruptHeader: return "CorruptHeader";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

/// Exit status used by the CLI for each category (1 is reserved for usage errors).
constexpr int exit_code(ErrorKind k) { return 10 + static_cast<int>(k); }

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define TOPOPT_REQUIRE(cond, kind, msg)          \
  do {                                           \
    if (!(cond)) throw ::topopt::Error((kind), (msg)); \
  } while (0)

}  // namespace topopt
