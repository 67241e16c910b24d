#pragma once

#include "popmap/config.hpp"
#include "popmap/evaluate.hpp"
#include "popmap/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace popmap {

// Progress lines for humans; never part of an output file.
using LogFn = std::function<void(const std::string&)>;

struct CommandOutput {
  std::vector<std::filesystem::path> files;
};

// <out>/manifest.csv, <out>/tiles/<modality>/*.png, <out>/grid.asc (+ .provenance),
// <out>/ground_truth.csv.
CommandOutput cmd_synthgen(const ExperimentConfig& config, const LogFn& log = {});
// Drops zero-population villages and density outliers, splits, prunes: <out>/split.csv.
CommandOutput cmd_split(const ExperimentConfig& config, const LogFn& log = {});
// <out>/checkpoint.bin and <out>/history.csv.
CommandOutput cmd_train(const ExperimentConfig& config, const LogFn& log = {});
// <out>/predictions.csv and eval_{summary,village,subdistrict,district}.csv.
CommandOutput cmd_eval(const ExperimentConfig& config, const LogFn& log = {});
// baseline_{summary,village,subdistrict,district,blocks}.csv.
CommandOutput cmd_baseline(const ExperimentConfig& config, const LogFn& log = {});
// report_districts.csv and report_map.png from the eval predictions.
CommandOutput cmd_report(const ExperimentConfig& config, const LogFn& log = {});

// Dispatch by name ("synthgen", "split", "train", "eval", "baseline", "report").
CommandOutput run_command(const std::string& name, const ExperimentConfig& config,
                          const LogFn& log = {});
inline constexpr const char* kCommandNames[] = {"synthgen", "split",    "train",
                                                "eval",     "baseline", "report"};

// Villages a command evaluates: those with a target in VAL (or in any partition for "all").
std::vector<std::string> evaluation_ids(const ExperimentConfig& config,
                                        const DatasetManifest& manifest,
                                        const SplitAssignment& split);

// `village_id,pred_log2_density`, optional provenance comment.
void write_predictions_csv(const std::filesystem::path& path,
                           const std::map<std::string, double>& predictions,
                           const std::string& provenance = {});
std::map<std::string, double> read_predictions_csv(const std::filesystem::path& path);

struct DistrictError {
  AdminCode district; // subdistrict_id is zero
  double pred_pop = 0.0;
  double true_pop = 0.0;
  double error_pct = 0.0; // 100 * (pred - true) / true
};

std::vector<DistrictError> district_errors(const std::map<AdminCode, PopulationPair>& districts);

// Diverging blue (under) to red (over); zero error is the neutral mid color.
std::array<std::uint8_t, 3> error_color(double error_pct, double scale_pct);
inline constexpr std::array<std::uint8_t, 3> kNeutralColor = {247, 247, 247};
inline constexpr std::array<std::uint8_t, 3> kMapBackground = {255, 255, 255};

// One rectangle per district, the bounding box of its village footprints, filled with the
// district's error color.
RgbImage render_error_map(const std::vector<DistrictError>& errors,
                          std::span<const VillageRecord> villages, double scale_pct,
                          double px_per_km);

} // namespace popmap
