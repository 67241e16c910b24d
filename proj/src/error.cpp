#include "popmap/error.hpp"

namespace popmap {

const char* error_code_name(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::Ok: return "Ok";
  case ErrorCode::Usage: return "UsageError";
  case ErrorCode::Config: return "ConfigError";
  case ErrorCode::Spec: return "SpecError";
  case ErrorCode::NonPositiveArea: return "NonPositiveArea";
  case ErrorCode::ManifestParse: return "ManifestParseError";
  case ErrorCode::MissingTile: return "MissingTileError";
  case ErrorCode::EmptyDataset: return "EmptyDataset";
  case ErrorCode::Decode: return "DecodeError";
  case ErrorCode::ShapeMismatch: return "ShapeMismatchError";
  case ErrorCode::Io: return "IOError";
  case ErrorCode::WeightFile: return "WeightFileError";
  case ErrorCode::ShapeIncompatible: return "ShapeIncompatibleError";
  case ErrorCode::DataPipeline: return "DataPipelineError";
  case ErrorCode::Checkpoint: return "CheckpointError";
  case ErrorCode::DegenerateTruth: return "DegenerateTruth";
  case ErrorCode::DegenerateInput: return "DegenerateInput";
  case ErrorCode::ZeroTruth: return "ZeroTruth";
  case ErrorCode::MissingVillage: return "MissingVillage";
  case ErrorCode::OutOfBounds: return "OutOfBounds";
  case ErrorCode::Divergence: return "DivergenceError";
  case ErrorCode::Internal: return "InternalError";
  }
  return "UnknownError";
}

int exit_status(ErrorCode code) noexcept {
  switch (code) {
  case ErrorCode::Ok: return 0;
  case ErrorCode::Usage:
  case ErrorCode::Config:
  case ErrorCode::Spec:
  case ErrorCode::ShapeIncompatible:
    return 1;
  case ErrorCode::Divergence:
    return 3;
  default:
    return 2;
  }
}

} // namespace popmap
