#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace psinvert {

enum class ErrorKind {
  DegenerateVector,
  ForeignVar,
  NonFinite,
  BadLadder,
  ShapeMismatch,
  SingularG,
  RankDeficientLights,
  OutOfRange,
  MissingGroundTruth,
  FileFormat,
  MissingFile,
  CountMismatch,
  BadSpec,
  BadConfig,
  EmptyBatch,
  NonFiniteGradient,
  TooFewImages,
  EmptyMask,
  DegenerateEstimate,
};

std::string_view to_string(ErrorKind kind);

/// All library failures are reported through this exception; `kind()` is the
/// machine-readable tag the CLI prints.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace psinvert
