#include "popmap/grid.hpp"

#include "popmap/error.hpp"
#include "popmap/text.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

namespace popmap {

PopulationGrid::PopulationGrid(int cols, int rows, double xll, double yll, double cellsize,
                               double fill)
    : n_cols(cols), n_rows(rows), xll_lon(xll), yll_lat(yll), cell_size(cellsize),
      values(static_cast<std::size_t>(cols) * rows, fill) {
  if (cols <= 0 || rows <= 0 || !(cellsize > 0.0))
    fail(ErrorCode::Config, "grid dimensions and cell size must be positive");
}

std::optional<std::pair<int, int>> PopulationGrid::cell_of(double lat, double lon) const {
  const double fr = (top_lat() - lat) / cell_size;
  const double fc = (lon - xll_lon) / cell_size;
  if (!(fr >= 0.0) || !(fc >= 0.0))
    return std::nullopt;
  const auto r = static_cast<long long>(std::floor(fr));
  const auto c = static_cast<long long>(std::floor(fc));
  if (r >= n_rows || c >= n_cols)
    return std::nullopt;
  return std::pair<int, int>{static_cast<int>(r), static_cast<int>(c)};
}

double PopulationGrid::total() const {
  double sum = 0.0;
  for (double v : values)
    if (!is_nodata(v))
      sum += v;
  return sum;
}

double cell_area_km2(const PopulationGrid& grid, int row) {
  const double side = grid.cell_size * kKmPerDegree;
  const double lat = grid.row_center_lat(row) * std::numbers::pi / 180.0;
  return side * side * std::cos(lat);
}

int select_block_side(double cell_area, double area_km2) {
  // |k^2 A - a| is unimodal in k, so walk up while the next odd side is strictly better.
  int k = 1;
  double best = std::abs(cell_area - area_km2);
  for (;;) {
    const double next = static_cast<double>(k + 2) * (k + 2) * cell_area;
    const double err = std::abs(next - area_km2);
    if (!(err < best))
      return k;
    best = err;
    k += 2;
  }
}

BlockEstimate estimate_block(const PopulationGrid& grid, double lat, double lon,
                             double area_km2) {
  const auto cell = grid.cell_of(lat, lon);
  if (!cell)
    fail(ErrorCode::OutOfBounds, "point (" + text::format_double(lat) + ", " +
                                     text::format_double(lon) + ") lies outside the grid");
  BlockEstimate est;
  est.row = cell->first;
  est.col = cell->second;
  const double a = cell_area_km2(grid, est.row);
  est.k = select_block_side(a, area_km2);
  const int h = est.k / 2;
  for (int r = est.row - h; r <= est.row + h; ++r) {
    if (r < 0 || r >= grid.n_rows)
      continue;
    for (int c = est.col - h; c <= est.col + h; ++c) {
      if (c < 0 || c >= grid.n_cols)
        continue;
      const double v = grid.at(r, c);
      if (!grid.is_nodata(v))
        est.population += v;
    }
  }
  est.area_km2 = static_cast<double>(est.k) * est.k * a;
  est.density = est.population / est.area_km2;
  return est;
}

BaselineResult baseline_eval(const PopulationGrid& grid, std::span<const VillageRecord> villages) {
  BaselineResult out;
  out.floor_density = std::numeric_limits<double>::infinity();
  for (const auto& v : villages) {
    if (!v.has_target())
      fail(ErrorCode::DataPipeline, "village " + v.village_id + " has no log2 density target");
    out.floor_density = std::min(out.floor_density, v.density);
  }
  if (villages.empty())
    fail(ErrorCode::EmptyDataset, "baseline_eval: no villages");

  std::map<std::string, double> truth;
  for (const auto& v : villages) {
    const BlockEstimate b = estimate_block(grid, v.lat, v.lon, v.area_km2);
    out.blocks[v.village_id] = b;
    double d = b.density;
    if (!(d > 0.0)) {
      d = out.floor_density;
      ++out.floored;
    }
    out.log2_density[v.village_id] = std::log2(d);
    out.population[v.village_id] = b.density * v.area_km2;
    truth[v.village_id] = *v.log2_density;
  }
  out.village = village_level_eval(out.log2_density, truth);
  out.subdistricts = aggregate_population_estimates(out.population, villages);
  return out;
}

PopulationGrid read_ascii_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot open grid " + path.string());

  std::string line;
  int cols = -1, rows = -1;
  double xll = NAN, yll = NAN, cellsize = NAN, nodata = -9999.0;
  bool x_center = false, y_center = false;
  std::streampos data_start = in.tellg();
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') {
      data_start = in.tellg();
      continue;
    }
    std::istringstream ls{std::string(t)};
    std::string key;
    ls >> key;
    for (auto& ch : key)
      ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    const bool is_key = !key.empty() && std::isalpha(static_cast<unsigned char>(key[0]));
    if (!is_key)
      break;
    std::string value;
    ls >> value;
    auto num = text::parse_number<double>(value);
    if (!num)
      fail(ErrorCode::Decode, "grid header '" + key + "' has no numeric value");
    if (key == "ncols")
      cols = static_cast<int>(*num);
    else if (key == "nrows")
      rows = static_cast<int>(*num);
    else if (key == "xllcorner")
      xll = *num;
    else if (key == "yllcorner")
      yll = *num;
    else if (key == "xllcenter")
      xll = *num, x_center = true;
    else if (key == "yllcenter")
      yll = *num, y_center = true;
    else if (key == "cellsize")
      cellsize = *num;
    else if (key == "nodata_value")
      nodata = *num;
    else
      fail(ErrorCode::Decode, "unknown grid header key '" + key + "'");
    data_start = in.tellg();
  }
  if (cols <= 0 || rows <= 0 || std::isnan(xll) || std::isnan(yll) || !(cellsize > 0.0))
    fail(ErrorCode::Decode, "grid header incomplete in " + path.string());
  if (x_center)
    xll -= cellsize / 2;
  if (y_center)
    yll -= cellsize / 2;

  PopulationGrid grid(cols, rows, xll, yll, cellsize);
  grid.nodata = nodata;
  in.clear();
  in.seekg(data_start);
  std::string token;
  std::size_t i = 0;
  while (in >> token) {
    if (i >= grid.values.size())
      fail(ErrorCode::Decode, "grid has more values than ncols*nrows");
    auto v = text::parse_number<double>(token);
    if (!v)
      fail(ErrorCode::Decode, "bad grid value '" + token + "'");
    if (*v < 0.0 && *v != nodata)
      fail(ErrorCode::Decode, "negative grid value " + token);
    grid.values[i++] = *v;
  }
  if (i != grid.values.size())
    fail(ErrorCode::Decode, "grid has " + std::to_string(i) + " values, expected " +
                                std::to_string(grid.values.size()));
  return grid;
}

void write_ascii_grid(const std::filesystem::path& path, const PopulationGrid& grid) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out)
      fail(ErrorCode::Io, "cannot write grid " + path.string());
    out << "ncols " << grid.n_cols << '\n'
        << "nrows " << grid.n_rows << '\n'
        << "xllcorner " << text::format_double(grid.xll_lon) << '\n'
        << "yllcorner " << text::format_double(grid.yll_lat) << '\n'
        << "cellsize " << text::format_double(grid.cell_size) << '\n'
        << "NODATA_value " << text::format_double(grid.nodata) << '\n';
    for (int r = 0; r < grid.n_rows; ++r) {
      for (int c = 0; c < grid.n_cols; ++c) {
        if (c)
          out << ' ';
        out << text::format_double(grid.at(r, c));
      }
      out << '\n';
    }
    if (!out)
      fail(ErrorCode::Io, "write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

} // namespace popmap
