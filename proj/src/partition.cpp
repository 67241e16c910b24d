#include "popmap/partition.hpp"

#include "popmap/error.hpp"
#include "popmap/rng.hpp"
#include "popmap/text.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <unordered_map>

namespace popmap {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct BucketKey {
  long long row;
  long long col;
  bool operator==(const BucketKey&) const = default;
};

struct BucketHash {
  std::size_t operator()(const BucketKey& k) const noexcept {
    return static_cast<std::size_t>(splitmix64(static_cast<std::uint64_t>(k.row) * 0x9e3779b1ULL ^
                                               static_cast<std::uint64_t>(k.col)));
  }
};

// Fixed lat/lon bucket grid; a bucket is at least threshold_km on a side everywhere in the
// data, so all partners of a point lie in its 3x3 neighbourhood.
class BucketIndex {
public:
  BucketIndex(double threshold_km, double max_abs_lat) {
    lat_step_ = threshold_km / kKmPerDegree;
    const double edge = std::min(89.0, max_abs_lat + lat_step_ + 1e-6);
    lon_step_ = std::min(360.0, 1.05 * threshold_km / (kKmPerDegree * std::cos(edge * kDegToRad)));
  }
  BucketKey key(LatLon p) const {
    return {static_cast<long long>(std::floor(p.lat / lat_step_)),
            static_cast<long long>(std::floor((p.lon + 180.0) / lon_step_))};
  }
  void insert(LatLon p, std::size_t id) { buckets_[key(p)].push_back(id); }
  template <typename F>
  void for_neighbours(LatLon p, F&& f) const {
    const auto k = key(p);
    const auto n_lon = static_cast<long long>(std::ceil(360.0 / lon_step_));
    for (long long dr = -1; dr <= 1; ++dr)
      for (long long dc = -1; dc <= 1; ++dc) {
        long long c = k.col + dc;
        // Wrap across the antimeridian.
        if (c < 0)
          c += n_lon;
        else if (c >= n_lon)
          c -= n_lon;
        auto it = buckets_.find({k.row + dr, c});
        if (it == buckets_.end())
          continue;
        for (std::size_t id : it->second)
          f(id);
      }
  }

private:
  double lat_step_;
  double lon_step_;
  std::unordered_map<BucketKey, std::vector<std::size_t>, BucketHash> buckets_;
};

} // namespace

std::string_view partition_name(Partition p) noexcept {
  switch (p) {
  case Partition::Train: return "train";
  case Partition::Val: return "val";
  case Partition::Pruned: return "pruned";
  }
  return "?";
}

Partition parse_partition(std::string_view name) {
  if (name == "train")
    return Partition::Train;
  if (name == "val")
    return Partition::Val;
  if (name == "pruned")
    return Partition::Pruned;
  fail(ErrorCode::ManifestParse, "unknown partition '" + std::string(name) + "'");
}

std::size_t SplitAssignment::n_train_subdistricts() const {
  return static_cast<std::size_t>(
      std::count_if(subdistrict_partition.begin(), subdistrict_partition.end(),
                    [](const auto& kv) { return kv.second == Partition::Train; }));
}

std::map<std::string, Partition> SplitAssignment::village_partitions() const {
  std::map<std::string, Partition> out;
  for (const auto& id : train_villages)
    out.emplace(id, Partition::Train);
  for (const auto& id : val_villages)
    out.emplace(id, Partition::Val);
  for (const auto& id : pruned_villages)
    out.emplace(id, Partition::Pruned);
  return out;
}

SplitAssignment split_subdistricts(std::span<const AdminCode> subdistricts, double train_frac,
                                   std::uint64_t seed) {
  if (subdistricts.empty())
    fail(ErrorCode::EmptyDataset, "split_subdistricts: no subdistricts");
  if (!(train_frac > 0.0 && train_frac < 1.0))
    fail(ErrorCode::Config, "split_subdistricts: train_frac must be in (0, 1)");

  const std::set<AdminCode> unique(subdistricts.begin(), subdistricts.end());
  std::vector<AdminCode> order(unique.begin(), unique.end());
  Rng rng = make_rng(seed, "subdistrict-split");
  shuffle_in_place(order, rng);
  const auto n_train =
      static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(order.size())));

  SplitAssignment out;
  out.seed = seed;
  for (std::size_t i = 0; i < order.size(); ++i)
    out.subdistrict_partition.emplace(order[i], i < n_train ? Partition::Train : Partition::Val);
  return out;
}

bool centers_overlap(LatLon a, LatLon b, double threshold_km, bool per_axis) {
  if (!per_axis)
    return great_circle_distance_km(a, b) < threshold_km;
  const double north = std::abs(a.lat - b.lat) * kKmPerDegree;
  double dlon = std::abs(a.lon - b.lon);
  if (dlon > 180.0)
    dlon = 360.0 - dlon;
  const double east = dlon * kKmPerDegree * std::cos(0.5 * (a.lat + b.lat) * kDegToRad);
  return north < threshold_km && east < threshold_km;
}

SplitAssignment prune_overlaps(SplitAssignment assignment, std::span<const VillageRecord> villages,
                               double threshold_km, bool per_axis) {
  if (!(threshold_km >= 0.0))
    fail(ErrorCode::Config, "prune_overlaps: threshold_km must be >= 0");
  assignment.threshold_km = threshold_km;
  assignment.per_axis = per_axis;
  assignment.train_villages.clear();
  assignment.val_villages.clear();
  assignment.pruned_villages.clear();

  std::vector<std::size_t> train, val;
  double max_abs_lat = 0.0;
  for (std::size_t i = 0; i < villages.size(); ++i) {
    const auto it = assignment.subdistrict_partition.find(villages[i].admin);
    if (it == assignment.subdistrict_partition.end())
      fail(ErrorCode::Spec, "village " + villages[i].village_id + " is in subdistrict " +
                                villages[i].admin.str() + ", which has no partition");
    (it->second == Partition::Val ? val : train).push_back(i);
    max_abs_lat = std::max(max_abs_lat, std::abs(villages[i].lat));
  }

  BucketIndex index(std::max(threshold_km, 1e-9), max_abs_lat);
  for (std::size_t i : val)
    index.insert(villages[i].location(), i);

  for (std::size_t i : train) {
    bool hit = false;
    index.for_neighbours(villages[i].location(), [&](std::size_t j) {
      hit = hit || centers_overlap(villages[i].location(), villages[j].location(), threshold_km,
                                   per_axis);
    });
    (hit ? assignment.pruned_villages : assignment.train_villages)
        .push_back(villages[i].village_id);
  }
  for (std::size_t i : val)
    assignment.val_villages.push_back(villages[i].village_id);
  return assignment;
}

void write_split(const std::filesystem::path& path, const SplitAssignment& split,
                 std::span<const VillageRecord> villages, const std::string& provenance) {
  const auto parts = split.village_partitions();
  std::ofstream out(path, std::ios::binary);
  if (!out)
    fail(ErrorCode::Io, "cannot write " + path.string());
  out << "# seed=" << split.seed << " threshold_km=" << text::format_double(split.threshold_km);
  if (split.per_axis)
    out << " per_axis=1";
  out << '\n';
  if (!provenance.empty())
    out << "# " << provenance << '\n';
  out << "village_id,partition\n";
  for (const auto& v : villages) {
    auto it = parts.find(v.village_id);
    if (it != parts.end())
      out << v.village_id << ',' << partition_name(it->second) << '\n';
  }
  if (!out)
    fail(ErrorCode::Io, "write failed for " + path.string());
}

SplitAssignment read_split(const std::filesystem::path& path,
                           std::span<const VillageRecord> villages) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorCode::Io, "cannot open split file " + path.string());
  std::map<std::string, const VillageRecord*> by_id;
  for (const auto& v : villages)
    by_id.emplace(v.village_id, &v);

  SplitAssignment out;
  std::string line;
  int line_no = 0;
  bool header_seen = false;
  auto bad = [&](const std::string& msg) {
    fail(ErrorCode::ManifestParse, path.string() + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    auto t = text::trim(line);
    if (t.empty())
      continue;
    if (t.front() == '#') {
      for (auto tok : text::split(t.substr(1), ' ')) {
        const auto eq = tok.find('=');
        if (eq == std::string_view::npos)
          continue;
        const auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "seed") {
          if (auto v = text::parse_number<std::uint64_t>(val))
            out.seed = *v;
        } else if (key == "threshold_km") {
          if (auto v = text::parse_number<double>(val))
            out.threshold_km = *v;
        } else if (key == "per_axis") {
          out.per_axis = val == "1";
        }
      }
      continue;
    }
    if (!header_seen) {
      if (t != "village_id,partition")
        bad("expected header 'village_id,partition'");
      header_seen = true;
      continue;
    }
    const auto cols = text::split(t, ',');
    if (cols.size() != 2)
      bad("expected 2 columns");
    const std::string id(text::trim(cols[0]));
    const auto part = parse_partition(text::trim(cols[1]));
    auto it = by_id.find(id);
    if (it == by_id.end())
      fail(ErrorCode::MissingVillage, path.string() + ":" + std::to_string(line_no) +
                                          ": village " + id + " is not in the manifest");
    const AdminCode code = it->second->admin;
    const Partition sub = part == Partition::Val ? Partition::Val : Partition::Train;
    auto [pos, inserted] = out.subdistrict_partition.emplace(code, sub);
    if (!inserted && pos->second != sub)
      bad("subdistrict " + code.str() + " appears in both partitions");
    switch (part) {
    case Partition::Train: out.train_villages.push_back(id); break;
    case Partition::Val: out.val_villages.push_back(id); break;
    case Partition::Pruned: out.pruned_villages.push_back(id); break;
    }
  }
  if (!header_seen)
    fail(ErrorCode::ManifestParse, path.string() + ": missing header");
  return out;
}

} // namespace popmap
