#include "popmap/domain.hpp"

#include "popmap/error.hpp"

#include <cmath>
#include <numbers>

namespace popmap {

std::string AdminCode::str() const {
  return std::to_string(state_id) + "/" + std::to_string(district_id) + "/" +
         std::to_string(subdistrict_id);
}

std::size_t AdminCodeHash::operator()(const AdminCode& code) const noexcept {
  std::size_t h = static_cast<std::size_t>(code.state_id);
  h = h * 1000003u ^ static_cast<std::size_t>(code.district_id);
  h = h * 1000003u ^ static_cast<std::size_t>(code.subdistrict_id);
  return h;
}

int tile_side_px(Modality m, double footprint_km) {
  return static_cast<int>(std::lround(footprint_km * 1000.0 / resolution_m(m)));
}

std::string_view modality_name(Modality m) noexcept {
  return m == Modality::Optical ? "optical" : "radar";
}

Modality parse_modality(std::string_view name) {
  if (name == "optical")
    return Modality::Optical;
  if (name == "radar")
    return Modality::Radar;
  fail(ErrorCode::Config, "unknown modality '" + std::string(name) + "'");
}

double great_circle_distance_km(LatLon a, LatLon b) noexcept {
  constexpr double deg = std::numbers::pi / 180.0;
  const double dlat = (b.lat - a.lat) * deg;
  const double dlon = (b.lon - a.lon) * deg;
  const double s1 = std::sin(dlat / 2.0);
  const double s2 = std::sin(dlon / 2.0);
  const double h = s1 * s1 + std::cos(a.lat * deg) * std::cos(b.lat * deg) * s2 * s2;
  return 2.0 * kEarthRadiusKm * std::asin(std::sqrt(std::min(1.0, h)));
}

VillageRecord derive_density(VillageRecord record) {
  if (!(record.area_km2 > 0.0))
    fail(ErrorCode::NonPositiveArea,
         "village " + record.village_id + ": area_km2 must be positive");
  record.density = static_cast<double>(record.population) / record.area_km2;
  if (record.density > 0.0)
    record.log2_density = std::log2(record.density);
  else
    record.log2_density.reset();
  return record;
}

} // namespace popmap
