#include "popmap/synthgen.hpp"

#include "popmap/error.hpp"
#include "popmap/ingest.hpp"
#include "popmap/rng.hpp"
#include "popmap/text.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <thread>

namespace popmap {
namespace {

// Salts for the per-village streams.
enum : std::uint64_t {
  kSaltAttributes = 1,
  kSaltStructures = 2,
  kSaltOptical = 3,
  kSaltRadar = 4,
};

int ceil_sqrt(int n) {
  int k = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  while (k * k < n)
    ++k;
  return std::max(k, 1);
}

double truncated_pareto(Rng& rng, double alpha, double lo, double hi) {
  const double tail = std::pow(lo / hi, alpha);
  const double u = uniform01(rng);
  return lo / std::pow(1.0 - u * (1.0 - tail), 1.0 / alpha);
}

double truncated_normal(Rng& rng, double mean, double sd, double lo, double hi) {
  if (sd == 0.0)
    return std::clamp(mean, lo, hi);
  for (;;) {
    const double x = mean + sd * standard_normal(rng);
    if (x >= lo && x <= hi)
      return x;
  }
}

double km_per_degree_lon(double lat) {
  return kKmPerDegree * std::cos(lat * std::numbers::pi / 180.0);
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

// Smooth random field in [0, 1]: bilinear-interpolated lattice noise with smoothstep.
class ValueNoise {
public:
  ValueNoise(Rng& rng, int side, int spacing) : spacing_(spacing) {
    n_ = side / spacing + 2;
    lattice_.resize(static_cast<std::size_t>(n_) * n_);
    for (auto& v : lattice_)
      v = uniform01(rng);
  }
  double at(double x, double y) const {
    const double fx = x / spacing_, fy = y / spacing_;
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
    const double tx = smooth(fx - ix), ty = smooth(fy - iy);
    const double a = get(ix, iy), b = get(ix + 1, iy);
    const double c = get(ix, iy + 1), d = get(ix + 1, iy + 1);
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
  }

private:
  static double smooth(double t) { return t * t * (3 - 2 * t); }
  double get(int x, int y) const {
    return lattice_[static_cast<std::size_t>(std::min(y, n_ - 1)) * n_ + std::min(x, n_ - 1)];
  }
  int spacing_;
  int n_;
  std::vector<double> lattice_;
};

struct PixelRect {
  double x0, y0, x1, y1; // in pixels of the target raster
};

// Radar-pixel-aligned footprint of a structure, in metres from the tile's top-left.
struct MetreRect {
  double x0, y0, x1, y1;
};

MetreRect structure_rect(const SynthConfig& cfg, const Structure& s) {
  const double res = resolution_m(Modality::Radar);
  const int side = tile_side_px(Modality::Radar, cfg.tile_footprint_km);
  const double cx = side / 2.0 + s.x_km * 1000.0 / res;
  const double cy = side / 2.0 - s.y_km * 1000.0 / res;
  const double px = std::floor(cx - s.w_px / 2.0);
  const double py = std::floor(cy - s.h_px / 2.0);
  return {px * res, py * res, (px + s.w_px) * res, (py + s.h_px) * res};
}

// Blends `color` into the image with weight coverage*strength over the rectangle.
void paint_rect(RgbImage& img, const PixelRect& r, const double color[3], double strength) {
  const int xa = std::max(0, static_cast<int>(std::floor(r.x0)));
  const int ya = std::max(0, static_cast<int>(std::floor(r.y0)));
  const int xb = std::min(img.width, static_cast<int>(std::ceil(r.x1)));
  const int yb = std::min(img.height, static_cast<int>(std::ceil(r.y1)));
  for (int y = ya; y < yb; ++y) {
    const double cy = std::min<double>(y + 1, r.y1) - std::max<double>(y, r.y0);
    for (int x = xa; x < xb; ++x) {
      const double cx = std::min<double>(x + 1, r.x1) - std::max<double>(x, r.x0);
      const double w = std::clamp(cx * cy, 0.0, 1.0) * strength;
      auto* p = img.at(x, y);
      for (int c = 0; c < 3; ++c)
        p[c] = to_byte(p[c] + w * (color[c] - p[c]));
    }
  }
}

RgbImage render_radar(const SynthConfig& cfg, const VillageRecord& v,
                      const std::vector<Structure>& structures) {
  const int side = tile_side_px(Modality::Radar, cfg.tile_footprint_km);
  RgbImage img(side, side);
  Rng rng = make_rng(cfg.seed, v.village_id, kSaltRadar);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      const auto g = to_byte(14.0 + 30.0 * uniform01(rng));
      auto* p = img.at(x, y);
      p[0] = g;
      p[1] = g;
      p[2] = to_byte(g * 1.1);
    }
  const double res = resolution_m(Modality::Radar);
  for (const auto& s : structures) {
    const auto m = structure_rect(cfg, s);
    const int x0 = static_cast<int>(std::lround(m.x0 / res));
    const int y0 = static_cast<int>(std::lround(m.y0 / res));
    for (int y = std::max(0, y0); y < std::min(side, y0 + s.h_px); ++y)
      for (int x = std::max(0, x0); x < std::min(side, x0 + s.w_px); ++x) {
        const auto g = to_byte(205.0 + 50.0 * uniform01(rng));
        auto* p = img.at(x, y);
        p[0] = g;
        p[1] = g;
        p[2] = g;
      }
  }
  return img;
}

RgbImage render_optical(const SynthConfig& cfg, const VillageRecord& v,
                        const std::vector<Structure>& structures) {
  const int side = tile_side_px(Modality::Optical, cfg.tile_footprint_km);
  const double res = resolution_m(Modality::Optical);
  RgbImage img(side, side);
  Rng rng = make_rng(cfg.seed, v.village_id, kSaltOptical);
  const ValueNoise coarse(rng, side, std::max(4, side / 3));
  const ValueNoise fine(rng, side, std::max(2, side / 10));

  const double radius_px = std::sqrt(v.area_km2 / std::numbers::pi) * 1000.0 / res;
  const double c0 = side / 2.0;
  for (int y = 0; y < side; ++y) {
    for (int x = 0; x < side; ++x) {
      const double n = 0.65 * coarse.at(x, y) + 0.35 * fine.at(x, y);
      const double d = std::hypot(x + 0.5 - c0, y + 0.5 - c0);
      // Cultivated land around the village, with a soft one-pixel edge.
      const double tint = std::clamp(radius_px - d + 0.5, 0.0, 1.0);
      const double jitter = 6.0 * (uniform01(rng) - 0.5);
      auto* p = img.at(x, y);
      p[0] = to_byte(70.0 + 60.0 * n + 45.0 * tint + jitter);
      p[1] = to_byte(95.0 + 50.0 * n + 20.0 * tint + jitter);
      p[2] = to_byte(55.0 + 35.0 * n - 10.0 * tint + jitter);
    }
  }

  static constexpr double kRoof[3] = {190.0, 185.0, 175.0};
  const double scale = 1.0 / res;
  if (cfg.render_mode == RenderMode::Standard) {
    for (const auto& s : structures) {
      const auto m = structure_rect(cfg, s);
      paint_rect(img, {m.x0 * scale, m.y0 * scale, m.x1 * scale, m.y1 * scale}, kRoof, 0.6);
    }
  } else {
    // Distractors: structure-sized bright patches unrelated to population.
    const auto count = uniform_int(rng, 0, cfg.max_distractors);
    for (std::int64_t i = 0; i < count; ++i) {
      const double w = uniform(rng, 0.6, 1.4), h = uniform(rng, 0.6, 1.4);
      const double x = uniform(rng, 0.0, side - w), y = uniform(rng, 0.0, side - h);
      paint_rect(img, {x, y, x + w, y + h}, kRoof, 0.6);
    }
  }
  return img;
}

} // namespace

std::string_view render_mode_name(RenderMode mode) noexcept {
  return mode == RenderMode::Standard ? "standard" : "complementary";
}

RenderMode parse_render_mode(std::string_view name) {
  if (name == "standard")
    return RenderMode::Standard;
  if (name == "complementary")
    return RenderMode::Complementary;
  fail(ErrorCode::Config, "unknown render mode '" + std::string(name) + "'");
}

void SynthConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok)
      fail(ErrorCode::Config, "synth: " + what);
  };
  need(n_states >= 1 && n_districts_per_state >= 1 && n_subdistricts_per_district >= 1 &&
           n_villages_per_subdistrict >= 1,
       "all counts must be >= 1");
  need(density_log2_std > 0.0, "density_log2_std must be > 0");
  need(density_log2_min < density_log2_max, "density_log2_min must be < density_log2_max");
  need(area_pareto_alpha > 1.0, "area_pareto_alpha must be > 1");
  need(area_min_km2 > 0.0 && area_min_km2 < area_max_km2, "need 0 < area_min_km2 < area_max_km2");
  need(tile_footprint_km > 0.0, "tile_footprint_km must be > 0");
  need(village_spacing_km > min_spacing_km && min_spacing_km >= 0.0,
       "village_spacing_km must exceed min_spacing_km");
  need(structures_per_person >= 0.0, "structures_per_person must be >= 0");
  need(structure_min_px >= 1 && structure_min_px <= structure_max_px, "bad structure size range");
  need(structures_per_hamlet >= 1, "structures_per_hamlet must be >= 1");
  need(hamlet_sigma_km > 0.0 && fixed_spread_km > 0.0, "spreads must be > 0");
  need(max_distractors >= 0, "max_distractors must be >= 0");
  need(grid_cell_deg > 0.0, "grid_cell_deg must be > 0");
  need(grid_noise_lo > 0.0 && grid_noise_lo <= grid_noise_hi, "need 0 < grid_noise_lo <= hi");
  need(std::abs(origin_lat) < 80.0, "origin_lat must be within +-80 degrees");
  // The whole disc of the largest village must land on the raster.
  need(grid_margin_deg * kKmPerDegree * std::cos(std::abs(origin_lat) * std::numbers::pi / 180) >
           std::sqrt(area_max_km2 / std::numbers::pi) + 1.0,
       "grid_margin_deg too small for area_max_km2");
}

namespace {

struct VillageDraw {
  double jitter_x, jitter_y; // in [-1, 1)
  double area_km2;
  double log2_density;
};

// Shelf packing: items fill rows of `cols`, left to right without gaps; a row is as tall as
// its tallest item.
struct Shelf {
  std::vector<double> x, y, row_height;
  double width = 0.0, height = 0.0;

  Shelf(int cols, const std::vector<double>& item_w, const std::vector<double>& item_h) {
    const int n = static_cast<int>(item_w.size());
    for (int r = 0; r * cols < n; ++r) {
      double cursor = 0.0, tallest = 0.0;
      for (int i = r * cols; i < std::min(n, (r + 1) * cols); ++i) {
        x.push_back(cursor);
        y.push_back(height);
        cursor += item_w[i];
        tallest = std::max(tallest, item_h[i]);
      }
      for (int i = r * cols; i < std::min(n, (r + 1) * cols); ++i)
        row_height.push_back(tallest);
      width = std::max(width, cursor);
      height += tallest;
    }
  }
};

} // namespace

SyntheticWorld generate_world(const SynthConfig& cfg) {
  cfg.validate();
  SyntheticWorld world;
  world.config = cfg;

  const int ns = cfg.n_states, nd = cfg.n_districts_per_state;
  const int nt = cfg.n_subdistricts_per_district, nv = cfg.n_villages_per_subdistrict;
  const int n = cfg.total_villages();
  auto id_of = [](int index) {
    char id[32];
    std::snprintf(id, sizeof id, "v%06d", index);
    return std::string(id);
  };

  std::vector<VillageDraw> draws(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(cfg.seed, id_of(i), kSaltAttributes);
    auto& d = draws[static_cast<std::size_t>(i)];
    d.jitter_x = uniform(rng, -1.0, 1.0);
    d.jitter_y = uniform(rng, -1.0, 1.0);
    d.area_km2 = truncated_pareto(rng, cfg.area_pareto_alpha, cfg.area_min_km2, cfg.area_max_km2);
    d.log2_density = truncated_normal(rng, cfg.density_log2_mean, cfg.density_log2_std,
                                      cfg.density_log2_min, cfg.density_log2_max);
  }

  // Villages are packed in rows whose cells widen to fit each village, so big villages do
  // not swallow their neighbours. Subdistricts are rectangular blocks of villages, districts
  // blocks of subdistricts, states side by side.
  const int gx = ceil_sqrt(nv), sx = ceil_sqrt(nt), dx = ceil_sqrt(nd);
  std::vector<double> extent(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i)
    extent[i] = std::max(cfg.village_spacing_km, std::sqrt(draws[i].area_km2));
  std::vector<Shelf> subs;
  std::vector<double> sub_w, sub_h;
  for (int b = 0; b < ns * nd * nt; ++b) {
    const std::vector<double> e(extent.begin() + b * nv, extent.begin() + (b + 1) * nv);
    subs.emplace_back(gx, e, e);
    sub_w.push_back(subs.back().width);
    sub_h.push_back(subs.back().height);
  }
  std::vector<Shelf> districts;
  std::vector<double> dist_w, dist_h;
  for (int b = 0; b < ns * nd; ++b) {
    const std::vector<double> w(sub_w.begin() + b * nt, sub_w.begin() + (b + 1) * nt);
    const std::vector<double> h(sub_h.begin() + b * nt, sub_h.begin() + (b + 1) * nt);
    districts.emplace_back(sx, w, h);
    dist_w.push_back(districts.back().width);
    dist_h.push_back(districts.back().height);
  }
  std::vector<Shelf> states;
  std::vector<double> state_x;
  double x_cursor = 0.0;
  for (int b = 0; b < ns; ++b) {
    const std::vector<double> w(dist_w.begin() + b * nd, dist_w.begin() + (b + 1) * nd);
    const std::vector<double> h(dist_h.begin() + b * nd, dist_h.begin() + (b + 1) * nd);
    states.emplace_back(dx, w, h);
    state_x.push_back(x_cursor);
    x_cursor += states.back().width;
  }

  // Jitter keeps neighbours at least min_spacing apart, with slack for the longitude
  // scale drifting across the region.
  const double jitter = 0.45 * (cfg.village_spacing_km - cfg.min_spacing_km);
  const double lon_scale = km_per_degree_lon(cfg.origin_lat);
  world.villages.reserve(static_cast<std::size_t>(n));
  world.truth.reserve(static_cast<std::size_t>(n));
  int index = 0;
  for (int s = 0; s < ns; ++s)
    for (int d = 0; d < nd; ++d)
      for (int t = 0; t < nt; ++t)
        for (int k = 0; k < nv; ++k, ++index) {
          const auto& draw = draws[static_cast<std::size_t>(index)];
          const auto& st = states[s];
          const auto& di = districts[s * nd + d];
          const auto& su = subs[(s * nd + d) * nt + t];
          const double x_km = state_x[s] + st.x[d] + di.x[t] + su.x[k] + extent[index] / 2 +
                              jitter * draw.jitter_x;
          const double y_km =
              st.y[d] + di.y[t] + su.y[k] + su.row_height[k] / 2 + jitter * draw.jitter_y;

          VillageRecord v;
          v.village_id = id_of(index);
          v.admin = {s + 1, d + 1, t + 1};
          v.lat = cfg.origin_lat + y_km / kKmPerDegree;
          v.lon = cfg.origin_lon + x_km / lon_scale;
          v.area_km2 = draw.area_km2;
          v.population = std::llround(std::exp2(draw.log2_density) * v.area_km2);
          world.truth.push_back(
              {v.village_id, draw.log2_density,
               std::llround(static_cast<double>(v.population) * cfg.structures_per_person)});
          world.villages.push_back(derive_density(std::move(v)));
        }

  world.grid = rasterize_population(cfg, world.villages);
  Rng noise = make_rng(cfg.seed, "grid-noise");
  for (auto& value : world.grid.values)
    value *= uniform(noise, cfg.grid_noise_lo, cfg.grid_noise_hi);
  return world;
}

PopulationGrid rasterize_population(const SynthConfig& cfg,
                                    const std::vector<VillageRecord>& villages) {
  if (villages.empty())
    fail(ErrorCode::EmptyDataset, "rasterize_population: no villages");
  double lat_lo = villages[0].lat, lat_hi = lat_lo, lon_lo = villages[0].lon, lon_hi = lon_lo;
  for (const auto& v : villages) {
    lat_lo = std::min(lat_lo, v.lat);
    lat_hi = std::max(lat_hi, v.lat);
    lon_lo = std::min(lon_lo, v.lon);
    lon_hi = std::max(lon_hi, v.lon);
  }
  const double cs = cfg.grid_cell_deg;
  // Snap the corner to the cell lattice so grids from related worlds line up.
  const double xll = std::floor((lon_lo - cfg.grid_margin_deg) / cs) * cs;
  const double yll = std::floor((lat_lo - cfg.grid_margin_deg) / cs) * cs;
  const int cols = static_cast<int>(std::ceil((lon_hi + cfg.grid_margin_deg - xll) / cs));
  const int rows = static_cast<int>(std::ceil((lat_hi + cfg.grid_margin_deg - yll) / cs));
  PopulationGrid grid(cols, rows, xll, yll, cs);

  // Each village's population is spread evenly over a disc of its area, sampled on a
  // lattice fine relative to both the disc and the cell.
  constexpr int kSteps = 12;
  for (const auto& v : villages) {
    if (v.population == 0)
      continue;
    const double radius = std::sqrt(v.area_km2 / std::numbers::pi);
    const double step = radius / kSteps;
    const double lon_km = km_per_degree_lon(v.lat);
    std::vector<std::pair<int, int>> cells;
    for (int i = -kSteps; i < kSteps; ++i)
      for (int j = -kSteps; j < kSteps; ++j) {
        const double ex = (i + 0.5) * step;
        const double ny = (j + 0.5) * step;
        if (ex * ex + ny * ny > radius * radius)
          continue;
        const auto cell = grid.cell_of(v.lat + ny / kKmPerDegree, v.lon + ex / lon_km);
        if (cell)
          cells.push_back(*cell);
      }
    if (cells.empty()) {
      if (const auto cell = grid.cell_of(v.lat, v.lon))
        cells.push_back(*cell);
      else
        fail(ErrorCode::Internal, "village " + v.village_id + " falls outside its own grid");
    }
    const double share = static_cast<double>(v.population) / static_cast<double>(cells.size());
    for (const auto& [r, c] : cells)
      grid.at(r, c) += share;
  }
  return grid;
}

std::vector<Structure> layout_structures(const SynthConfig& cfg, const VillageRecord& village,
                                         long long n_structures) {
  std::vector<Structure> out;
  if (n_structures <= 0)
    return out;
  Rng rng = make_rng(cfg.seed, village.village_id, kSaltStructures);
  const bool fixed = cfg.render_mode == RenderMode::Complementary;
  const double spread =
      fixed ? cfg.fixed_spread_km : std::sqrt(village.area_km2 / std::numbers::pi);
  const double sigma = std::min(cfg.hamlet_sigma_km, spread / 2.0);

  // Hamlet centers uniform over the disc, structures scattered normally around them.
  const auto n_hamlets = std::max<long long>(
      1, (n_structures + cfg.structures_per_hamlet - 1) / cfg.structures_per_hamlet);
  std::vector<std::pair<double, double>> hamlets;
  hamlets.reserve(static_cast<std::size_t>(n_hamlets));
  for (long long h = 0; h < n_hamlets; ++h) {
    const double r = spread * std::sqrt(uniform01(rng));
    const double a = 2.0 * std::numbers::pi * uniform01(rng);
    hamlets.emplace_back(r * std::cos(a), r * std::sin(a));
  }
  out.reserve(static_cast<std::size_t>(n_structures));
  for (long long i = 0; i < n_structures; ++i) {
    const auto& [hx, hy] = hamlets[static_cast<std::size_t>(i % n_hamlets)];
    Structure s;
    s.x_km = hx + sigma * standard_normal(rng);
    s.y_km = hy + sigma * standard_normal(rng);
    s.w_px = static_cast<int>(uniform_int(rng, cfg.structure_min_px, cfg.structure_max_px));
    s.h_px = static_cast<int>(uniform_int(rng, cfg.structure_min_px, cfg.structure_max_px));
    out.push_back(s);
  }
  return out;
}

RgbImage render_tile(const SynthConfig& cfg, const VillageRecord& village,
                     const GroundTruthRow& truth, Modality modality) {
  const auto structures = layout_structures(cfg, village, truth.n_structures);
  return modality == Modality::Radar ? render_radar(cfg, village, structures)
                                     : render_optical(cfg, village, structures);
}

void render_tiles(const SyntheticWorld& world, const std::filesystem::path& out_dir,
                  int workers) {
  for (Modality m : kModalities)
    std::filesystem::create_directories(out_dir / std::string(modality_name(m)));
  const std::size_t n = world.villages.size();
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&](std::exception_ptr& err) {
    try {
      for (std::size_t i = next++; i < n && !failed; i = next++) {
        const auto& v = world.villages[i];
        for (Modality m : kModalities) {
          const auto img = render_tile(world.config, v, world.truth[i], m);
          write_png(tile_path(out_dir, m, v.village_id), img);
        }
      }
    } catch (...) {
      err = std::current_exception();
      failed = true;
    }
  };
  workers = std::max(1, workers);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  {
    std::vector<std::jthread> pool;
    for (int w = 1; w < workers; ++w)
      pool.emplace_back(work, std::ref(errors[static_cast<std::size_t>(w)]));
    work(errors[0]);
  }
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

void write_ground_truth(const std::filesystem::path& path, const std::vector<GroundTruthRow>& rows,
                        const std::string& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  if (!provenance.empty())
    out << "# " << provenance << "\n";
  out << "village_id,log2_density\n";
  for (const auto& r : rows)
    out << r.village_id << ',' << text::format_double(r.log2_density) << '\n';
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

} // namespace popmap
