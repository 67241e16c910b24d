#include "popmap/ingest.hpp"

#include "popmap/image.hpp"
#include "popmap/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

namespace popmap {
namespace {

constexpr std::string_view kManifestHeader =
    "village_id,state_id,district_id,subdistrict_id,lat,lon,area_km2,population";

VillageRecord parse_row(std::string_view line) {
  const auto cols = text::split(line, ',');
  if (cols.size() != 8)
    fail(ErrorCode::ManifestParse, "expected 8 columns, found " + std::to_string(cols.size()));

  VillageRecord r;
  r.village_id = std::string(text::trim(cols[0]));
  if (r.village_id.empty())
    fail(ErrorCode::ManifestParse, "empty village_id");

  auto need_int = [&](std::string_view s, const char* name) {
    auto v = text::parse_number<int>(s);
    if (!v || *v < 0)
      fail(ErrorCode::ManifestParse, std::string(name) + " must be a non-negative integer");
    return *v;
  };
  auto need_real = [&](std::string_view s, const char* name) {
    auto v = text::parse_number<double>(s);
    if (!v || !std::isfinite(*v))
      fail(ErrorCode::ManifestParse, std::string(name) + " is not a number");
    return *v;
  };

  r.admin = {need_int(cols[1], "state_id"), need_int(cols[2], "district_id"),
             need_int(cols[3], "subdistrict_id")};
  r.lat = need_real(cols[4], "lat");
  r.lon = need_real(cols[5], "lon");
  if (r.lat < -90.0 || r.lat > 90.0 || r.lon < -180.0 || r.lon > 180.0)
    fail(ErrorCode::ManifestParse, "coordinates out of range");
  r.area_km2 = need_real(cols[6], "area_km2");
  auto pop = text::parse_number<long long>(cols[7]);
  if (!pop || *pop < 0)
    fail(ErrorCode::ManifestParse, "population must be a non-negative integer");
  r.population = *pop;
  return derive_density(std::move(r));
}

std::optional<std::filesystem::path> find_tile(const std::filesystem::path& root, Modality m,
                                               const std::string& id) {
  for (const char* ext : {"png", "jpg", "jpeg"}) {
    auto p = tile_path(root, m, id, ext);
    if (std::filesystem::exists(p))
      return p;
  }
  return std::nullopt;
}

} // namespace

const VillageRecord* DatasetManifest::find(const std::string& village_id) const {
  if (index_.size() != villages.size())
    reindex();
  auto it = index_.find(village_id);
  return it == index_.end() ? nullptr : &villages[it->second];
}

void DatasetManifest::reindex() const {
  index_.clear();
  for (std::size_t i = 0; i < villages.size(); ++i)
    index_.emplace(villages[i].village_id, i);
}

std::filesystem::path tile_path(const std::filesystem::path& root, Modality m,
                                const std::string& village_id, const std::string& ext) {
  return root / std::string(modality_name(m)) / (village_id + "." + ext);
}

DatasetManifest load_manifest(const std::filesystem::path& path,
                              const ManifestLoadOptions& options) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorCode::Io, "cannot open manifest " + path.string());

  DatasetManifest manifest;
  std::string line;
  int line_no = 0;
  bool have_header = false;
  std::unordered_set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = text::trim(line);
    if (line_no == 1 && view.starts_with("\xEF\xBB\xBF"))
      view.remove_prefix(3);
    if (view.empty() || view.front() == '#')
      continue;
    if (!have_header) {
      if (view != kManifestHeader)
        fail(ErrorCode::ManifestParse, path.string() + ":" + std::to_string(line_no) +
                                           ": missing or unexpected header row");
      have_header = true;
      continue;
    }
    try {
      auto record = parse_row(view);
      if (!seen.insert(record.village_id).second)
        fail(ErrorCode::ManifestParse, "duplicate village_id " + record.village_id);
      manifest.villages.push_back(std::move(record));
    } catch (const Error& e) {
      if (options.strict)
        fail(e.code(), path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      manifest.issues.push_back({line_no, e.code(), e.what()});
    }
  }
  if (!have_header)
    fail(ErrorCode::ManifestParse, path.string() + ": missing header row");
  manifest.reindex();

  if (!options.tile_root.empty()) {
    for (const auto& v : manifest.villages) {
      auto opt = find_tile(options.tile_root, Modality::Optical, v.village_id);
      auto rad = find_tile(options.tile_root, Modality::Radar, v.village_id);
      if (opt && rad) {
        manifest.tiles.emplace(
            v.village_id,
            TilePair{{v.village_id, Modality::Optical, opt->string(), options.footprint_km},
                     {v.village_id, Modality::Radar, rad->string(), options.footprint_km}});
        continue;
      }
      std::string missing = !opt && !rad ? "optical and radar" : (!opt ? "optical" : "radar");
      ManifestIssue issue{0, ErrorCode::MissingTile,
                          "village " + v.village_id + ": missing " + missing + " tile"};
      if (options.strict)
        fail(issue.code, issue.message);
      manifest.issues.push_back(std::move(issue));
    }
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, std::span<const VillageRecord> villages,
                    const std::string& comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  if (!comment.empty())
    out << "# " << comment << "\n";
  out << kManifestHeader << "\n";
  for (const auto& v : villages) {
    out << v.village_id << ',' << v.admin.state_id << ',' << v.admin.district_id << ','
        << v.admin.subdistrict_id << ',' << text::format_double(v.lat) << ','
        << text::format_double(v.lon) << ',' << text::format_double(v.area_km2) << ','
        << v.population << "\n";
  }
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

OutlierSplit filter_outliers(std::span<const VillageRecord> villages, double lower_frac,
                             double upper_frac) {
  if (villages.empty())
    fail(ErrorCode::EmptyDataset, "filter_outliers: no villages");
  if (lower_frac < 0.0 || upper_frac < 0.0 || lower_frac + upper_frac >= 1.0)
    fail(ErrorCode::Config, "filter_outliers: fractions must satisfy 0 <= lower+upper < 1");

  const std::size_t n = villages.size();
  const auto n_low = static_cast<std::size_t>(std::floor(static_cast<double>(n) * lower_frac));
  const auto n_high = static_cast<std::size_t>(std::floor(static_cast<double>(n) * upper_frac));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (villages[a].density != villages[b].density)
      return villages[a].density < villages[b].density;
    return villages[a].village_id < villages[b].village_id;
  });

  std::vector<bool> drop(n, false);
  for (std::size_t i = 0; i < n_low; ++i)
    drop[order[i]] = true;
  for (std::size_t i = 0; i < n_high; ++i)
    drop[order[n - 1 - i]] = true;

  OutlierSplit out;
  for (std::size_t i = 0; i < n; ++i)
    (drop[i] ? out.removed : out.kept).push_back(villages[i]);
  return out;
}

ImageTensor load_tile(const TileRef& ref) {
  const RgbImage img = read_image(ref.path);
  const int expected = tile_side_px(ref.modality, ref.footprint_km);
  if (img.width != img.height || img.width != expected)
    fail(ErrorCode::ShapeMismatch, ref.path + ": decoded " + std::to_string(img.width) + "x" +
                                       std::to_string(img.height) + ", expected " +
                                       std::to_string(expected) + "x" + std::to_string(expected) +
                                       " for " + std::string(modality_name(ref.modality)));
  ImageTensor t(ref.modality, img.height, img.width);
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c)
      t.data[c * plane + i] = static_cast<float>(img.pixels[i * 3 + c]) / 255.0f;
  return t;
}

ImageTensor prepare_input(const ImageTensor& input, bool train_mode, Rng& rng,
                          const PrepConfig& config) {
  const int out_side = config.output_side;
  double crop = static_cast<double>(std::min(input.height, input.width));
  double x0 = 0.0;
  double y0 = 0.0;
  bool flip_h = false;
  bool flip_v = false;
  if (train_mode) {
    const double frac = uniform(rng, config.crop_min_frac, config.crop_max_frac);
    crop = std::max(1.0, std::round(crop * frac));
    x0 = std::floor(uniform01(rng) * (input.width - crop + 1.0));
    y0 = std::floor(uniform01(rng) * (input.height - crop + 1.0));
    flip_h = bernoulli(rng, config.flip_prob);
    flip_v = bernoulli(rng, config.flip_prob);
  }

  // Half-pixel-centre bilinear sampling of the crop window, edges clamped.
  const double scale = crop / out_side;
  std::vector<int> xi0(out_side), xi1(out_side), yi0(out_side), yi1(out_side);
  std::vector<float> xw(out_side), yw(out_side);
  auto axis = [&](int i, double origin, int limit, int& i0, int& i1, float& w) {
    double s = origin + (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(limit - 1));
    i0 = static_cast<int>(std::floor(s));
    i1 = std::min(i0 + 1, limit - 1);
    w = static_cast<float>(s - i0);
  };
  for (int i = 0; i < out_side; ++i) {
    axis(i, x0, input.width, xi0[i], xi1[i], xw[i]);
    axis(i, y0, input.height, yi0[i], yi1[i], yw[i]);
  }

  ImageTensor out(input.modality, out_side, out_side);
  for (int c = 0; c < 3; ++c) {
    for (int oy = 0; oy < out_side; ++oy) {
      const int sy = flip_v ? out_side - 1 - oy : oy;
      const float wy = yw[sy];
      for (int ox = 0; ox < out_side; ++ox) {
        const int sx = flip_h ? out_side - 1 - ox : ox;
        const float wx = xw[sx];
        const float top = input.at(c, yi0[sy], xi0[sx]) * (1.0f - wx) + input.at(c, yi0[sy], xi1[sx]) * wx;
        const float bot = input.at(c, yi1[sy], xi0[sx]) * (1.0f - wx) + input.at(c, yi1[sy], xi1[sx]) * wx;
        float v = std::clamp(top * (1.0f - wy) + bot * wy, 0.0f, 1.0f);
        if (config.subtract_mean)
          v -= config.channel_mean[c];
        out.at(c, oy, ox) = v;
      }
    }
  }
  return out;
}

} // namespace popmap
