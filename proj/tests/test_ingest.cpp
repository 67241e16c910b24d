#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "popmap/image.hpp"
#include "popmap/ingest.hpp"
#include "popmap/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

using namespace popmap;
using testsupport::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p) << s;
}

const char* kHeader = "village_id,state_id,district_id,subdistrict_id,lat,lon,area_km2,population\n";

std::vector<VillageRecord> villages_with_densities(const std::vector<double>& densities) {
  std::vector<VillageRecord> out;
  for (std::size_t i = 0; i < densities.size(); ++i) {
    VillageRecord r;
    char id[16];
    std::snprintf(id, sizeof id, "v%05zu", i);
    r.village_id = id;
    r.area_km2 = 1.0;
    r.density = densities[i];
    if (r.density > 0)
      r.log2_density = std::log2(r.density);
    out.push_back(r);
  }
  return out;
}

// Sort-and-slice oracle for outlier removal: returns removed ids.
std::set<std::string> slice_oracle(const std::vector<VillageRecord>& v, double lo, double hi) {
  auto sorted = v;
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    return std::tie(a.density, a.village_id) < std::tie(b.density, b.village_id);
  });
  const auto n_lo = static_cast<std::size_t>(std::floor(v.size() * lo));
  const auto n_hi = static_cast<std::size_t>(std::floor(v.size() * hi));
  std::set<std::string> removed;
  for (std::size_t i = 0; i < n_lo; ++i)
    removed.insert(sorted[i].village_id);
  for (std::size_t i = 0; i < n_hi; ++i)
    removed.insert(sorted[sorted.size() - 1 - i].village_id);
  return removed;
}

RgbImage random_image(int side, Rng& rng) {
  RgbImage img(side, side);
  for (auto& p : img.pixels)
    p = static_cast<std::uint8_t>(uniform_int(rng, 0, 255));
  return img;
}

// Smooth image for lossy-codec checks.
RgbImage smooth_image(int side) {
  RgbImage img(side, side);
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) {
      auto* p = img.at(x, y);
      p[0] = static_cast<std::uint8_t>(255.0 * x / (side - 1));
      p[1] = static_cast<std::uint8_t>(255.0 * y / (side - 1));
      p[2] = static_cast<std::uint8_t>(128 + 100 * std::sin(x * 0.05) * std::cos(y * 0.05));
    }
  return img;
}

} // namespace

TEST_CASE("load_manifest parses a valid three-row file") {
  TempDir dir("ingest");
  write_text(dir / "m.csv", std::string("# comment line\n") + kHeader +
                                "a,1,1,1,20.0,78.0,1.0,1024\n"
                                "b,1,1,2,20.1,78.1,4.0,300\n"
                                "c,1,2,1,20.2,78.2,2.0,0\n");
  const auto m = load_manifest(dir / "m.csv");
  REQUIRE(m.villages.size() == 3);
  CHECK(m.issues.empty());
  CHECK(m.villages[0].density == 1024.0);
  CHECK(*m.villages[0].log2_density == 10.0);
  CHECK(m.villages[1].density == 75.0);
  CHECK(m.villages[1].admin == AdminCode{1, 1, 2});
  CHECK_FALSE(m.villages[2].has_target());
  REQUIRE(m.find("b"));
  CHECK(m.find("b")->population == 300);
  CHECK(m.find("zz") == nullptr);
}

TEST_CASE("a zero-area row is rejected with its line number and the rest load") {
  TempDir dir("ingest");
  write_text(dir / "m.csv", std::string(kHeader) + "a,1,1,1,20,78,1.0,10\n"
                                                   "b,1,1,1,20,78,0,10\n"
                                                   "c,1,1,1,20,78,2.0,10\n"
                                                   "d,1,1,1,20,78,abc,10\n");
  const auto m = load_manifest(dir / "m.csv");
  CHECK(m.villages.size() == 2);
  REQUIRE(m.issues.size() == 2);
  CHECK(m.issues[0].line == 3);
  CHECK(m.issues[0].code == ErrorCode::NonPositiveArea);
  CHECK(m.issues[1].line == 5);
  CHECK(m.issues[1].code == ErrorCode::ManifestParse);

  ManifestLoadOptions strict;
  strict.strict = true;
  CHECK_THROWS_AS(load_manifest(dir / "m.csv", strict), Error);
}

TEST_CASE("a missing header is a parse error") {
  TempDir dir("ingest");
  write_text(dir / "m.csv", "a,1,1,1,20,78,1.0,10\n");
  try {
    load_manifest(dir / "m.csv");
    FAIL("expected ManifestParse");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ManifestParse);
  }
}

TEST_CASE("synthetic manifest round-trips through write and load") {
  auto cfg = testsupport::small_world_config(25, 17); // 500 villages
  const auto world = generate_world(cfg);
  REQUIRE(world.villages.size() == 500);
  TempDir dir("ingest");
  write_manifest(dir / "m.csv", world.villages, "round trip");
  const auto m = load_manifest(dir / "m.csv");
  REQUIRE(m.villages.size() == world.villages.size());
  CHECK(m.issues.empty());
  for (std::size_t i = 0; i < m.villages.size(); ++i) {
    const auto& a = m.villages[i];
    const auto& b = world.villages[i];
    CHECK(a.village_id == b.village_id);
    CHECK(a.admin == b.admin);
    CHECK(a.lat == b.lat);
    CHECK(a.lon == b.lon);
    CHECK(a.area_km2 == b.area_km2);
    CHECK(a.population == b.population);
    CHECK(a.density == b.density);
    CHECK(a.log2_density == b.log2_density);
  }
}

TEST_CASE("missing tiles are collected rather than thrown") {
  TempDir dir("ingest");
  write_text(dir / "m.csv", std::string(kHeader) + "a,1,1,1,20,78,1.0,10\nb,1,1,1,20,78,1.0,10\n");
  std::filesystem::create_directories(dir / "tiles/optical");
  std::filesystem::create_directories(dir / "tiles/radar");
  write_png(dir / "tiles/optical/a.png", RgbImage(150, 150));
  write_png(dir / "tiles/radar/a.png", RgbImage(450, 450));
  write_png(dir / "tiles/optical/b.png", RgbImage(150, 150));
  ManifestLoadOptions opt;
  opt.tile_root = dir / "tiles";
  const auto m = load_manifest(dir / "m.csv", opt);
  CHECK(m.villages.size() == 2);
  CHECK(m.has_tiles("a"));
  CHECK_FALSE(m.has_tiles("b"));
  REQUIRE(m.issues.size() == 1);
  CHECK(m.issues[0].code == ErrorCode::MissingTile);
}

TEST_CASE("filter_outliers removes five from each tail of 1000") {
  Rng rng = make_rng(4, "outliers");
  std::vector<double> d(1000);
  for (auto& x : d)
    x = std::exp2(uniform(rng, 0.0, 12.0));
  const auto v = villages_with_densities(d);
  const auto split = filter_outliers(v);
  CHECK(split.removed.size() == 10);
  CHECK(split.kept.size() == 990);

  const auto noop = filter_outliers(v, 0.0, 0.0);
  CHECK(noop.removed.empty());
  REQUIRE(noop.kept.size() == v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    CHECK(noop.kept[i].village_id == v[i].village_id);

  CHECK_THROWS_AS(filter_outliers(std::vector<VillageRecord>{}), Error);
  CHECK_THROWS_AS(filter_outliers(v, 0.5, 0.5), Error);
}

TEST_CASE("filter_outliers matches the sort-and-slice oracle and keeps tails ordered") {
  Rng rng = make_rng(8, "outliers-oracle");
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> d(200);
    for (auto& x : d) // coarse values force density ties
      x = static_cast<double>(uniform_int(rng, 1, 60));
    const auto v = villages_with_densities(d);
    const double lo = uniform(rng, 0.0, 0.2), hi = uniform(rng, 0.0, 0.2);
    const auto split = filter_outliers(v, lo, hi);
    std::set<std::string> removed;
    for (const auto& r : split.removed)
      removed.insert(r.village_id);
    CHECK(removed == slice_oracle(v, lo, hi));
    CHECK(split.kept.size() + split.removed.size() == v.size());

    // Kept order follows input order.
    std::size_t pos = 0;
    for (const auto& k : split.kept) {
      while (pos < v.size() && v[pos].village_id != k.village_id)
        ++pos;
      CHECK(pos < v.size());
    }
    if (!split.kept.empty()) {
      const auto [mn, mx] = std::minmax_element(
          split.kept.begin(), split.kept.end(),
          [](const auto& a, const auto& b) { return a.density < b.density; });
      for (const auto& r : split.removed)
        CHECK((r.density <= mn->density || r.density >= mx->density));
    }
  }
}

TEST_CASE("load_tile decodes both modalities at their native sides") {
  TempDir dir("ingest");
  Rng rng = make_rng(2, "tiles");
  const auto opt = random_image(150, rng);
  const auto rad = random_image(450, rng);
  write_png(dir / "o.png", opt);
  write_png(dir / "r.png", rad);

  const auto to = load_tile({"x", Modality::Optical, (dir / "o.png").string()});
  CHECK(to.height == 150);
  CHECK(to.width == 150);
  const auto tr = load_tile({"x", Modality::Radar, (dir / "r.png").string()});
  CHECK(tr.height == 450);
  CHECK(tr.width == 450);

  // PNG is lossless: exact values.
  bool exact = true;
  for (int y = 0; y < 150; ++y)
    for (int x = 0; x < 150; ++x)
      for (int c = 0; c < 3; ++c)
        exact = exact && to.at(c, y, x) == opt.at(x, y)[c] / 255.0f;
  CHECK(exact);

  write_png(dir / "black.png", RgbImage(150, 150, 0));
  const auto tb = load_tile({"x", Modality::Optical, (dir / "black.png").string()});
  CHECK(std::all_of(tb.data.begin(), tb.data.end(), [](float v) { return v == 0.0f; }));
}

TEST_CASE("load_tile rejects wrong sizes and undecodable files") {
  TempDir dir("ingest");
  write_png(dir / "o.png", RgbImage(150, 150));
  try {
    load_tile({"x", Modality::Radar, (dir / "o.png").string()});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ShapeMismatch);
  }
  write_text(dir / "bad.png", "not an image");
  try {
    load_tile({"x", Modality::Optical, (dir / "bad.png").string()});
    FAIL("expected Decode");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::Decode);
  }
}

TEST_CASE("JPEG tiles stay within codec tolerance") {
  TempDir dir("ingest");
  const auto img = smooth_image(150);
  for (int quality : {90, 95}) {
    write_jpeg(dir / "o.jpg", img, quality);
    const auto t = load_tile({"x", Modality::Optical, (dir / "o.jpg").string()});
    float worst = 0.0f;
    for (int y = 0; y < 150; ++y)
      for (int x = 0; x < 150; ++x)
        for (int c = 0; c < 3; ++c)
          worst = std::max(worst, std::abs(t.at(c, y, x) - img.at(x, y)[c] / 255.0f));
    CHECK(worst <= 0.05f);
  }
}

TEST_CASE("prepare_input in eval mode resizes a constant image to a constant image") {
  ImageTensor in(Modality::Optical, 150, 150, 0.37f);
  Rng rng = make_rng(0);
  const auto out = prepare_input(in, false, rng);
  CHECK(out.height == 224);
  CHECK(out.width == 224);
  for (float v : out.data)
    REQUIRE(v == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("prepare_input in train mode is deterministic under a fixed seed") {
  Rng src = make_rng(3, "img");
  ImageTensor in(Modality::Radar, 450, 450);
  for (auto& v : in.data)
    v = static_cast<float>(uniform01(src));
  Rng a = make_rng(10, "v1", 1), b = make_rng(10, "v1", 1);
  const auto x = prepare_input(in, true, a);
  const auto y = prepare_input(in, true, b);
  CHECK(x.data == y.data);
}

TEST_CASE("horizontal flips occur about half the time") {
  // A left-to-right ramp survives any 90-100% crop, so the flip shows as a reversed ramp.
  ImageTensor in(Modality::Optical, 150, 150);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 150; ++y)
      for (int x = 0; x < 150; ++x)
        in.at(c, y, x) = x / 149.0f;
  PrepConfig cfg;
  cfg.output_side = 16;
  Rng rng = make_rng(77, "flips");
  int flipped = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto out = prepare_input(in, true, rng, cfg);
    flipped += out.at(0, 0, 0) > out.at(0, 0, 15);
  }
  CHECK(flipped >= 450);
  CHECK(flipped <= 550);
}

TEST_CASE("prepare_input stays inside [0, 1] on random images") {
  Rng rng = make_rng(5, "range");
  PrepConfig cfg;
  cfg.output_side = 64;
  for (int i = 0; i < 50; ++i) {
    const int side = static_cast<int>(uniform_int(rng, 150, 300));
    ImageTensor in(Modality::Optical, side, side);
    for (auto& v : in.data)
      v = static_cast<float>(uniform01(rng) > 0.5 ? 1.0 : uniform01(rng));
    const auto out = prepare_input(in, i % 2 == 0, rng, cfg);
    for (float v : out.data)
      REQUIRE((v >= 0.0f && v <= 1.0f));
  }
}
