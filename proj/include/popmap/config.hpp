#pragma once

#include "popmap/models.hpp"
#include "popmap/synthgen.hpp"
#include "popmap/train.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace popmap {

using ConfigMap = std::map<std::string, std::string>;

// Flat `key = value` lines; '#' starts a comment. Throws Config on malformed or duplicate keys.
ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<config>");
ConfigMap read_config_file(const std::filesystem::path& path);

struct ExperimentConfig {
  std::uint64_t seed = 1;
  int workers = 1;

  // Paths; empty ones default to files inside out_dir.
  std::filesystem::path out_dir = "out";
  std::filesystem::path manifest;
  std::filesystem::path tile_root;
  std::filesystem::path grid;
  std::filesystem::path split;
  std::filesystem::path checkpoint;
  std::filesystem::path predictions;

  SynthConfig synth;

  double train_frac = 0.7;
  double overlap_threshold_km = 2.25;
  bool per_axis = false;
  double outlier_lower_frac = 0.005;
  double outlier_upper_frac = 0.005;

  ModelSpec model;
  TrainConfig train;

  // Villages evaluated by eval, baseline and report: "val" or "all".
  std::string eval_set = "val";
  double report_scale_pct = 50.0; // error mapped to the ends of the color scale
  double report_px_per_km = 4.0;

  std::filesystem::path manifest_path() const;
  std::filesystem::path tile_root_path() const;
  std::filesystem::path grid_path() const;
  std::filesystem::path split_path() const;
  std::filesystem::path checkpoint_path() const;
  std::filesystem::path predictions_path() const;

  // Applies keys on top of the current values; unknown keys throw Config.
  void apply(const ConfigMap& values);
  // Every key with its resolved value, sorted by key.
  ConfigMap to_map() const;
  // FNV-1a over the canonical `key=value` listing, as 16 hex digits.
  std::string hash() const;
  // `config_hash=<hex> seed=<n>`, the comment header of every output file.
  std::string provenance() const;
  // Throws Config / Spec.
  void validate() const;
};

// Defaults, then the file (when given), then overrides; later values win.
ExperimentConfig load_experiment_config(const std::filesystem::path& file,
                                        const ConfigMap& overrides = {});

} // namespace popmap
