#include "doatrack/common.hpp"

#include <cmath>

namespace doatrack {

double wrap_degrees(double deg) {
  double r = std::fmod(deg, 360.0);
  if (r <= -180.0) r += 360.0;
  if (r > 180.0) r -= 360.0;
  return r;
}

double wrap_radians(double rad) {
  double r = std::fmod(rad, kTwoPi);
  if (r <= -kPi) r += kTwoPi;
  if (r > kPi) r -= kTwoPi;
  return r;
}

double circular_distance_deg(double a, double b) { return std::abs(wrap_degrees(a - b)); }

}  // namespace doatrack
