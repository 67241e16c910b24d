#pragma once

#include <compare>
#include <optional>
#include <string>
#include <string_view>

namespace popmap {

inline constexpr double kEarthRadiusKm = 6371.0088;
// Length of one degree of arc on the sphere above, in km.
inline constexpr double kKmPerDegree = 111.195;
inline constexpr double kDefaultFootprintKm = 4.5;

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

struct AdminCode {
  int state_id = 0;
  int district_id = 0;
  int subdistrict_id = 0;

  auto operator<=>(const AdminCode&) const = default;
  bool operator==(const AdminCode&) const = default;

  // Stable textual id, "state/district/subdistrict".
  std::string str() const;
};

struct AdminCodeHash {
  std::size_t operator()(const AdminCode& code) const noexcept;
};

enum class Modality { Optical, Radar };

inline constexpr Modality kModalities[] = {Modality::Optical, Modality::Radar};

// Nominal ground resolution in metres per pixel.
constexpr double resolution_m(Modality m) noexcept {
  return m == Modality::Optical ? 30.0 : 10.0;
}

// Pixel side of a tile of `footprint_km` for the modality (150 optical / 450 radar at 4.5 km).
int tile_side_px(Modality m, double footprint_km);

std::string_view modality_name(Modality m) noexcept;
Modality parse_modality(std::string_view name);

struct VillageRecord {
  std::string village_id;
  AdminCode admin;
  double lat = 0.0;
  double lon = 0.0;
  double area_km2 = 0.0;
  long long population = 0;
  double density = 0.0;
  std::optional<double> log2_density;

  LatLon location() const { return {lat, lon}; }
  bool has_target() const { return log2_density.has_value(); }
};

struct TileRef {
  std::string village_id;
  Modality modality = Modality::Optical;
  std::string path;
  double footprint_km = kDefaultFootprintKm;
};

double great_circle_distance_km(LatLon a, LatLon b) noexcept;

// Populates density and (for density > 0) log2_density. Throws NonPositiveArea.
VillageRecord derive_density(VillageRecord record);

} // namespace popmap
