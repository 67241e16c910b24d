#pragma once

#include "popmap/domain.hpp"
#include "popmap/evaluate.hpp"

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <optional>
#include <vector>

namespace popmap {

// Lat/lon-aligned raster of population counts. Row 0 is the northernmost row, as in the
// ASCII grid file layout.
struct PopulationGrid {
  int n_cols = 0;
  int n_rows = 0;
  double xll_lon = 0.0; // lower-left corner
  double yll_lat = 0.0;
  double cell_size = 1.0 / 120.0; // degrees
  double nodata = -9999.0;
  std::vector<double> values; // n_rows * n_cols, row-major

  PopulationGrid() = default;
  PopulationGrid(int cols, int rows, double xll, double yll, double cellsize, double fill = 0.0);

  double& at(int row, int col) { return values[static_cast<std::size_t>(row) * n_cols + col]; }
  double at(int row, int col) const { return values[static_cast<std::size_t>(row) * n_cols + col]; }
  bool is_nodata(double v) const noexcept { return v == nodata; }

  double top_lat() const noexcept { return yll_lat + n_rows * cell_size; }
  double row_center_lat(int row) const noexcept { return top_lat() - (row + 0.5) * cell_size; }
  double col_center_lon(int col) const noexcept { return xll_lon + (col + 0.5) * cell_size; }
  // Cell containing the point, or nullopt when outside.
  std::optional<std::pair<int, int>> cell_of(double lat, double lon) const;
  // Sum of all non-nodata cells.
  double total() const;
};

// Spherical cell area in km^2 for a row.
double cell_area_km2(const PopulationGrid& grid, int row);

// Odd block side k >= 1 minimising |k^2 * cell_area - area_km2|; ties go to the smaller k.
int select_block_side(double cell_area, double area_km2);

struct BlockEstimate {
  int row = 0;
  int col = 0;
  int k = 1;
  double population = 0.0;
  double area_km2 = 0.0; // k^2 * center-cell area
  double density = 0.0;
};

// Block readout centered on the cell containing (lat, lon). Cells outside the raster or
// nodata add zero population and full area. Throws OutOfBounds.
BlockEstimate estimate_block(const PopulationGrid& grid, double lat, double lon, double area_km2);

inline double estimate_village_density(const PopulationGrid& grid, double lat, double lon,
                                       double area_km2) {
  return estimate_block(grid, lat, lon, area_km2).density;
}

struct BaselineResult {
  std::map<std::string, BlockEstimate> blocks;
  std::map<std::string, double> log2_density; // zero estimates floored first
  std::map<std::string, double> population;   // density * village area, unfloored
  std::map<AdminCode, PopulationPair> subdistricts;
  EvalReport village;
  std::size_t floored = 0;
  double floor_density = 0.0; // smallest positive truth density among the villages
};

// Block estimates for every village (each needs a target), routed through the village and
// subdistrict evaluation. The subdistrict report is left to the caller via `subdistricts`.
BaselineResult baseline_eval(const PopulationGrid& grid, std::span<const VillageRecord> villages);

// ASCII grid: ncols, nrows, xllcorner, yllcorner, cellsize, nodata_value, then rows north
// to south. The reader also takes xllcenter/yllcenter and skips leading '#' lines.
PopulationGrid read_ascii_grid(const std::filesystem::path& path);
void write_ascii_grid(const std::filesystem::path& path, const PopulationGrid& grid);

} // namespace popmap
