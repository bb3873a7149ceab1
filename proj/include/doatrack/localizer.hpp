#pragma once

#include <cmath>
#include <limits>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "doatrack/common.hpp"
#include "doatrack/dprtf.hpp"

namespace doatrack {

struct ArrayGeometry {
  std::vector<Eigen::Vector3d> positions;  // meters, one per channel
  double speed_of_sound = 343.0;

  int channels() const { return static_cast<int>(positions.size()); }
  double max_spacing() const;
  /// Highest frequency free of spatial aliasing: c / (2 * max spacing).
  double aliasing_frequency() const;
  /// Throws unless there are >= 2 mutually distinct positions.
  void validate() const;
};

/// Horizontal unit vector for an azimuth in degrees.
Eigen::Vector3d azimuth_direction(double azimuth_deg);

/// Far-field arrival delay (seconds) of `channel` relative to `reference`
/// for a source in direction `azimuth_deg`.
double relative_delay(const ArrayGeometry& geom, int channel, int reference, double azimuth_deg);

/// D azimuths on a regular circular grid ending at 180 deg, e.g. D = 72 gives
/// -175, -170, ..., 180.
std::vector<double> default_azimuths(int count = 72);

/// Candidate directions with precomputed CGMM means for every STFT bin.
class CandidateGrid {
 public:
  CandidateGrid() = default;
  CandidateGrid(std::vector<double> azimuths, int bins, int channels);

  int size() const { return static_cast<int>(azimuths_.size()); }
  int bins() const { return bins_; }
  int channels() const { return channels_; }
  const std::vector<double>& azimuths() const { return azimuths_; }

  /// Mean for candidate d, bin f and non-reference channel i in 1..I-1.
  Complex& mean(int d, int f, int i) { return means_[index(d, f, i)]; }
  const Complex& mean(int d, int f, int i) const { return means_[index(d, f, i)]; }

  /// Text table with a versioned header; lossless for doubles.
  void save(std::ostream& os) const;
  static CandidateGrid load(std::istream& is);

  bool operator==(const CandidateGrid&) const = default;

 private:
  std::size_t index(int d, int f, int i) const {
    return (static_cast<std::size_t>(d) * bins_ + f) * (channels_ - 1) + (i - 1);
  }

  std::vector<double> azimuths_;
  int bins_ = 0;
  int channels_ = 0;
  std::vector<Complex> means_;
};

/// c_f^{i,d} = g * exp(-j 2 pi f tau_{i,d}); tau is the plane-wave delay of
/// channel i relative to the reference. Colocated microphones yield zero
/// delay everywhere and a warning on stderr.
CandidateGrid precompute_means(const ArrayGeometry& geom, std::vector<double> azimuths, int bins,
                               int fft_length, int sample_rate, double magnitude = 1.0,
                               int reference = 0);

/// Mixture weights on the probability simplex.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(std::vector<double> w) : w_(std::move(w)) {}
  static WeightVector uniform(int size);

  int size() const { return static_cast<int>(w_.size()); }
  double operator[](int d) const { return w_[d]; }
  const std::vector<double>& values() const { return w_; }
  std::vector<double>& values() { return w_; }

  /// Clamps every entry to >= floor and renormalizes.
  void apply_floor(double floor);

 private:
  std::vector<double> w_;
};

struct LocalizerConfig {
  double variance = 0.5;         // sigma^2
  double learning_rate = 0.07;   // eta
  double entropy_weight = 0.1;   // gamma
  double mean_magnitude = 1.0;   // g
  double weight_floor = 1e-12;
  double peak_threshold = 0.1;
  double min_separation_deg = 15.0;
  // Rescale each feature to mean_magnitude before the update, keeping only
  // its phase.
  bool normalize_features = false;
  // Lower bound on each gradient entry in the online update; bounds the
  // per-frame growth of a weight to exp(learning_rate * gradient_clip).
  // Infinity disables it.
  double gradient_clip = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// log N_c(c; m, s2) = -log(pi s2) - |c - m|^2 / s2.
inline double log_complex_gaussian(Complex c, Complex m, double s2) {
  return -std::log(kPi * s2) - std::norm(c - m) / s2;
}

struct Responsibilities {
  Eigen::MatrixXd rho;              // features x candidates, rows sum to 1
  std::vector<bool> underflow;      // feature had no representable density
};

Responsibilities cgmm_responsibilities(const FeatureFrame& features, const CandidateGrid& grid,
                                       const WeightVector& w, double variance,
                                       Backend backend = Backend::openmp);

/// Gradient of the per-frame cost -L_t + gamma * H with respect to w, where
/// L_t is the feature-count-normalized CGMM log-likelihood.
std::vector<double> objective_gradient(const FeatureFrame& features, const CandidateGrid& grid,
                                       const WeightVector& w, const LocalizerConfig& cfg,
                                       Backend backend = Backend::openmp);

/// The cost itself (used for finite-difference checks).
double objective_value(const FeatureFrame& features, const CandidateGrid& grid,
                       std::span<const double> w, const LocalizerConfig& cfg);

/// Exponentiated-gradient step: w_d <- w_d exp(-eta g_d) / normalizer.
WeightVector eg_update(const WeightVector& previous, std::span<const double> gradient,
                       double learning_rate);

struct Peak {
  int index = 0;
  double azimuth_deg = 0.0;
  double weight = 0.0;
};

/// Circular local maxima >= threshold, greedily pruned to min_separation,
/// sorted by weight descending.
std::vector<Peak> peak_pick(const WeightVector& w, const std::vector<double>& azimuths,
                            double threshold, double min_separation_deg);

/// Online CGMM weight estimation: one EG step per frame.
class OnlineLocalizer {
 public:
  OnlineLocalizer() = default;
  OnlineLocalizer(CandidateGrid grid, LocalizerConfig cfg);

  const WeightVector& update(const FeatureFrame& features, Backend backend = Backend::openmp);

  const WeightVector& weights() const { return weights_; }
  const CandidateGrid& grid() const { return grid_; }
  const LocalizerConfig& config() const { return cfg_; }
  std::vector<Peak> peaks() const;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(weights_.values());
  }

 private:
  CandidateGrid grid_;
  LocalizerConfig cfg_;
  WeightVector weights_;
};

}  // namespace doatrack
