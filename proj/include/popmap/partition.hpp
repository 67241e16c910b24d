#pragma once

#include "popmap/domain.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace popmap {

enum class Partition { Train, Val, Pruned };

std::string_view partition_name(Partition p) noexcept;
Partition parse_partition(std::string_view name);

inline constexpr double kOverlapThresholdKm = 2.25;

struct SplitAssignment {
  std::map<AdminCode, Partition> subdistrict_partition; // Train or Val only
  std::vector<std::string> train_villages;
  std::vector<std::string> val_villages;
  std::vector<std::string> pruned_villages;
  std::uint64_t seed = 0;
  double threshold_km = kOverlapThresholdKm;
  bool per_axis = false;

  std::size_t n_train_subdistricts() const;
  // Partition of every assigned village, keyed by id.
  std::map<std::string, Partition> village_partitions() const;
};

// Uniform random subdistrict assignment; |TRAIN| == round(train_frac * n). Duplicate codes
// are collapsed. Throws EmptyDataset / Config.
SplitAssignment split_subdistricts(std::span<const AdminCode> subdistricts, double train_frac,
                                   std::uint64_t seed);

// Assigns villages by subdistrict, then moves a TRAIN village to pruned when a VAL village
// lies strictly closer than threshold_km. With per_axis, both the north-south and the
// east-west separations must be below the threshold instead.
SplitAssignment prune_overlaps(SplitAssignment assignment, std::span<const VillageRecord> villages,
                               double threshold_km = kOverlapThresholdKm, bool per_axis = false);

// True when two centres count as overlapping under the rule above.
bool centers_overlap(LatLon a, LatLon b, double threshold_km, bool per_axis);

// Split CSV `village_id,partition`, preceded by `# seed=<n> threshold_km=<x>`.
void write_split(const std::filesystem::path& path, const SplitAssignment& split,
                 std::span<const VillageRecord> villages, const std::string& provenance = {});
SplitAssignment read_split(const std::filesystem::path& path,
                           std::span<const VillageRecord> villages);

} // namespace popmap
