#pragma once

#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>

namespace doatrack {

using Complex = std::complex<double>;

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Execution backend for the data-parallel kernels. Both backends produce
/// bitwise-identical results; `serial` is the reference implementation.
enum class Backend { serial, openmp };

inline double deg_to_rad(double deg) { return deg * kPi / 180.0; }
inline double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle in degrees into (-180, 180].
double wrap_degrees(double deg);

/// Wraps an angle in radians into (-pi, pi].
double wrap_radians(double rad);

/// Absolute circular difference in degrees, in [0, 180].
double circular_distance_deg(double a, double b);

}  // namespace doatrack
