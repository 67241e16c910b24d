#include "popmap/rng.hpp"

#include <cmath>
#include <numbers>

namespace popmap {

// Box-Muller, one draw per call (no cached spare) so the stream is position-independent.
double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0)
    u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace popmap
