#pragma once

#include "popmap/domain.hpp"
#include "popmap/error.hpp"
#include "popmap/rng.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace popmap {

struct TilePair {
  TileRef optical;
  TileRef radar;

  const TileRef& get(Modality m) const { return m == Modality::Optical ? optical : radar; }
};

struct ManifestIssue {
  int line = 0; // 1-based line in the CSV; 0 when not tied to a row
  ErrorCode code = ErrorCode::ManifestParse;
  std::string message;
};

struct DatasetManifest {
  std::vector<VillageRecord> villages;
  std::map<std::string, TilePair> tiles;
  std::vector<ManifestIssue> issues;

  const VillageRecord* find(const std::string& village_id) const;
  bool has_tiles(const std::string& village_id) const { return tiles.count(village_id) != 0; }
  // Rebuilds the id index; call after mutating `villages`.
  void reindex() const;

private:
  mutable std::map<std::string, std::size_t> index_;
};

struct ManifestLoadOptions {
  // Directory laid out as <root>/<modality>/<village_id>.<png|jpg|jpeg>; empty skips tiles.
  std::filesystem::path tile_root;
  double footprint_km = kDefaultFootprintKm;
  // Throw on the first bad row instead of collecting it in `issues`.
  bool strict = false;
};

// Manifest CSV: village_id,state_id,district_id,subdistrict_id,lat,lon,area_km2,population.
// Lines starting with '#' are comments.
DatasetManifest load_manifest(const std::filesystem::path& path,
                              const ManifestLoadOptions& options = {});

void write_manifest(const std::filesystem::path& path, std::span<const VillageRecord> villages,
                    const std::string& comment = {});

std::filesystem::path tile_path(const std::filesystem::path& root, Modality m,
                                const std::string& village_id, const std::string& ext = "png");

struct OutlierSplit {
  std::vector<VillageRecord> kept;
  std::vector<VillageRecord> removed;
};

// Removes floor(n*lower_frac) lowest- and floor(n*upper_frac) highest-density villages.
// Ties are ordered by village_id. `kept` preserves input order.
OutlierSplit filter_outliers(std::span<const VillageRecord> villages, double lower_frac = 0.005,
                             double upper_frac = 0.005);

// Planar (channel-major) float image with values in [0, 1].
struct ImageTensor {
  Modality modality = Modality::Optical;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(Modality m, int h, int w, float fill = 0.0f)
      : modality(m), height(h), width(w), data(static_cast<std::size_t>(3) * h * w, fill) {}

  float& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  float at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

ImageTensor load_tile(const TileRef& ref);

struct PrepConfig {
  int output_side = 224;
  double crop_min_frac = 0.9;
  double crop_max_frac = 1.0;
  double flip_prob = 0.5;
  // Optional per-channel mean subtraction; off keeps outputs in [0, 1].
  bool subtract_mean = false;
  float channel_mean[3] = {0.5f, 0.5f, 0.5f};
};

// Eval mode: bilinear resize to output_side. Train mode: random square crop of
// [crop_min_frac, crop_max_frac] of the side, resize, independent h/v flips.
ImageTensor prepare_input(const ImageTensor& input, bool train_mode, Rng& rng,
                          const PrepConfig& config = {});

} // namespace popmap
