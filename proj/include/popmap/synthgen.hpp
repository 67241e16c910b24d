#pragma once

#include "popmap/domain.hpp"
#include "popmap/grid.hpp"
#include "popmap/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace popmap {

enum class RenderMode {
  // Both modalities show the structures; optical also shows the village footprint.
  Standard,
  // Radar shows the structures at a fixed spread (count only); optical shows the footprint
  // and structure-like distractors but no structures (area only).
  Complementary,
};

std::string_view render_mode_name(RenderMode mode) noexcept;
RenderMode parse_render_mode(std::string_view name);

struct SynthConfig {
  int n_states = 1;
  int n_districts_per_state = 2;
  int n_subdistricts_per_district = 5;
  int n_villages_per_subdistrict = 10;

  double density_log2_mean = 5.5;
  double density_log2_std = 1.5;
  double density_log2_min = 0.0;
  double density_log2_max = 12.0;
  double area_pareto_alpha = 1.5;
  double area_min_km2 = 0.2;
  double area_max_km2 = 30.0;
  double tile_footprint_km = kDefaultFootprintKm;
  std::uint64_t seed = 1;

  // Layout: villages on a jittered square lattice, subdistricts as rectangular blocks.
  double origin_lat = 20.0;
  double origin_lon = 78.0;
  double village_spacing_km = 2.5;
  double min_spacing_km = 1.0;

  // Rendering oracle.
  double structures_per_person = 0.2;
  int structure_min_px = 2; // radar pixels
  int structure_max_px = 4;
  int structures_per_hamlet = 8;
  double hamlet_sigma_km = 0.12;
  double fixed_spread_km = 0.8; // complementary mode radar spread
  int max_distractors = 40;
  RenderMode render_mode = RenderMode::Standard;

  // Population raster.
  double grid_cell_deg = 1.0 / 120.0;
  double grid_noise_lo = 0.8;
  double grid_noise_hi = 1.25;
  double grid_margin_deg = 0.05;

  int total_villages() const {
    return n_states * n_districts_per_state * n_subdistricts_per_district *
           n_villages_per_subdistrict;
  }
  // Throws Config.
  void validate() const;
};

struct GroundTruthRow {
  std::string village_id;
  double log2_density = 0.0; // latent draw before population rounding
  long long n_structures = 0;
};

struct SyntheticWorld {
  SynthConfig config;
  std::vector<VillageRecord> villages;
  std::vector<GroundTruthRow> truth; // parallel to villages
  PopulationGrid grid;
};

SyntheticWorld generate_world(const SynthConfig& config);

// Disc rasterization of village populations, before noise.
PopulationGrid rasterize_population(const SynthConfig& config,
                                    const std::vector<VillageRecord>& villages);

struct Structure {
  double x_km = 0.0; // offset east of the village center
  double y_km = 0.0; // offset north
  int w_px = 2;      // radar pixels
  int h_px = 2;
};

// Structure layout for one village, deterministic in (seed, village_id).
std::vector<Structure> layout_structures(const SynthConfig& config, const VillageRecord& village,
                                         long long n_structures);

// Renders one tile; deterministic in (seed, village_id, modality).
RgbImage render_tile(const SynthConfig& config, const VillageRecord& village,
                     const GroundTruthRow& truth, Modality modality);

// Writes <out_dir>/<modality>/<village_id>.png for every village.
void render_tiles(const SyntheticWorld& world, const std::filesystem::path& out_dir,
                  int workers = 1);

// Ground truth CSV `village_id,log2_density`.
void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthRow>& rows,
                        const std::string& provenance = {});

// Radar intensity threshold separating structures from background.
inline constexpr int kRadarStructureThreshold = 128;

} // namespace popmap
