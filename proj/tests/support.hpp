#pragma once
// Shared fixtures and independent reference computations for the tests.

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "doatrack/dprtf.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/simulator.hpp"
#include "doatrack/tracker.hpp"

namespace testsupport {

using doatrack::Complex;

inline doatrack::ArrayGeometry square_array(double half_side) {
  doatrack::ArrayGeometry g;
  g.positions = {{half_side, half_side, 0.0},
                 {-half_side, half_side, 0.0},
                 {-half_side, -half_side, 0.0},
                 {half_side, -half_side, 0.0}};
  return g;
}

inline doatrack::ArrayGeometry pair_array(double spacing) {
  doatrack::ArrayGeometry g;
  g.positions = {{0.0, 0.0, 0.0}, {spacing, 0.0, 0.0}};
  return g;
}

inline doatrack::SceneConfig static_scene(const doatrack::ArrayGeometry& geom, double azimuth_deg,
                                          double duration_s, doatrack::SourceSignal signal,
                                          std::uint64_t seed = 3) {
  doatrack::SceneConfig sc;
  sc.geometry = geom;
  sc.duration_s = duration_s;
  sc.seed = seed;
  doatrack::SourceSpec src;
  src.trajectory = {{0.0, azimuth_deg}};
  src.signal = signal;
  sc.sources.push_back(src);
  return sc;
}

inline Complex random_complex(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng)};
}

// Dense weighted least squares: minimizes sum_r w_r |x_r^T a - y_r|^2 through
// the normal equations solved by full-pivot LU.
inline Eigen::VectorXcd weighted_least_squares(const std::vector<doatrack::CrossRelationRow>& rows,
                                               const std::vector<double>& weights) {
  const Eigen::Index dim = rows.front().regressor.size();
  Eigen::MatrixXcd normal = Eigen::MatrixXcd::Zero(dim, dim);
  Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const Eigen::VectorXcd x = rows[r].regressor;
    normal += weights[r] * x.conjugate() * x.transpose();
    rhs += weights[r] * x.conjugate() * rows[r].target;
  }
  return normal.fullPivLu().solve(rhs);
}

inline double relative_error(const Eigen::VectorXcd& a, const Eigen::VectorXcd& b) {
  return (a - b).norm() / std::max(b.norm(), 1e-300);
}

// Textbook Kalman filter for the tracker state with observation matrix [I2 | 0].
struct KalmanReference {
  Eigen::Vector3d mean;
  Eigen::Matrix3d cov;

  void step(const Eigen::Vector2d& z, const Eigen::Matrix3d& q, const Eigen::Matrix2d& r) {
    const double theta = std::atan2(mean(1), mean(0));
    Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
    d(0, 2) = -std::sin(theta);
    d(1, 2) = std::cos(theta);
    const Eigen::Vector3d m = d * mean;
    const Eigen::Matrix3d p = d * cov * d.transpose() + q;
    Eigen::Matrix<double, 2, 3> h = Eigen::Matrix<double, 2, 3>::Zero();
    h(0, 0) = 1.0;
    h(1, 1) = 1.0;
    const Eigen::Matrix2d s = h * p * h.transpose() + r;
    const Eigen::Matrix<double, 3, 2> k = p * h.transpose() * s.inverse();
    mean = m + k * (z - h * m);
    // Joseph form, numerically independent of the implementation's update.
    const Eigen::Matrix3d a = Eigen::Matrix3d::Identity() - k * h;
    cov = a * p * a.transpose() + k * r * k.transpose();
  }
};

// Cross-correlation lag of b relative to a with parabolic refinement.
inline double correlation_lag(const std::vector<double>& a, const std::vector<double>& b,
                              int max_lag) {
  std::vector<double> c(2 * max_lag + 1, 0.0);
  const long n = static_cast<long>(std::min(a.size(), b.size()));
  for (int lag = -max_lag; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (long t = max_lag; t < n - max_lag; ++t) acc += a[t] * b[t + lag];
    c[lag + max_lag] = acc;
  }
  int best = 0;
  for (int k = 1; k < static_cast<int>(c.size()); ++k)
    if (c[k] > c[best]) best = k;
  double frac = 0.0;
  if (best > 0 && best + 1 < static_cast<int>(c.size())) {
    const double l = c[best - 1], m = c[best], r = c[best + 1];
    const double denom = l - 2.0 * m + r;
    if (denom != 0.0) frac = 0.5 * (l - r) / denom;
  }
  return best - max_lag + frac;
}

inline std::vector<double> channel(const doatrack::AudioBuffer& audio, int c) {
  std::vector<double> out(static_cast<std::size_t>(audio.length()));
  for (Eigen::Index n = 0; n < audio.length(); ++n) out[n] = audio.samples(c, n);
  return out;
}

}  // namespace testsupport
