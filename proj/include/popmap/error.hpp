#pragma once

#include <stdexcept>
#include <string>

namespace popmap {

// Values are part of the C ABI (popmap_status); append only.
enum class ErrorCode : int {
  Ok = 0,
  Usage = 1,
  Config = 2,
  Spec = 3,
  NonPositiveArea = 10,
  ManifestParse = 11,
  MissingTile = 12,
  EmptyDataset = 13,
  Decode = 14,
  ShapeMismatch = 15,
  Io = 16,
  WeightFile = 17,
  ShapeIncompatible = 18,
  DataPipeline = 19,
  Checkpoint = 20,
  DegenerateTruth = 21,
  DegenerateInput = 22,
  ZeroTruth = 23,
  MissingVillage = 24,
  OutOfBounds = 25,
  Divergence = 30,
  Internal = 99,
};

const char* error_code_name(ErrorCode code) noexcept;

// Process exit status for a failure of this kind: 1 usage/config, 2 data, 3 numerical.
int exit_status(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

} // namespace popmap
