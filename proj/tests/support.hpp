#pragma once

#include "popmap/ingest.hpp"
#include "popmap/synthgen.hpp"

#include <atomic>
#include <filesystem>
#include <string>
#include <unistd.h>

namespace testsupport {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("popmap-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline popmap::SynthConfig small_world_config(int subdistricts_per_district, std::uint64_t seed) {
  popmap::SynthConfig cfg;
  cfg.n_states = 1;
  cfg.n_districts_per_state = 2;
  cfg.n_subdistricts_per_district = subdistricts_per_district;
  cfg.n_villages_per_subdistrict = 10;
  cfg.seed = seed;
  return cfg;
}

// Manifest in memory with tiles rendered under `root`.
inline popmap::DatasetManifest render_manifest(const popmap::SyntheticWorld& world,
                                               const std::filesystem::path& root) {
  popmap::render_tiles(world, root, 1);
  popmap::DatasetManifest m;
  m.villages = world.villages;
  m.reindex();
  for (const auto& v : world.villages) {
    popmap::TilePair p;
    p.optical = {v.village_id, popmap::Modality::Optical,
                 popmap::tile_path(root, popmap::Modality::Optical, v.village_id).string(),
                 world.config.tile_footprint_km};
    p.radar = {v.village_id, popmap::Modality::Radar,
               popmap::tile_path(root, popmap::Modality::Radar, v.village_id).string(),
               world.config.tile_footprint_km};
    m.tiles.emplace(v.village_id, p);
  }
  return m;
}

} // namespace testsupport
