#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "doatrack/frontend.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/metrics.hpp"

namespace doatrack {

enum class SourceSignal { white_noise, speech_like, file };

struct TrajectoryPoint {
  double time_s = 0.0;
  double azimuth_deg = 0.0;
};

struct Interval {
  double start_s = 0.0;
  double end_s = 0.0;
};

struct SourceSpec {
  int id = 1;
  std::vector<TrajectoryPoint> trajectory;  // piecewise linear, held at the ends
  SourceSignal signal = SourceSignal::speech_like;
  std::string file;                 // for SourceSignal::file
  std::vector<Interval> activity;   // empty: active throughout
  double gain_db = 0.0;

  /// Azimuth at time t (linear interpolation along the shortest arc), wrapped.
  double azimuth_at(double time_s) const;
  bool active_at(double time_s) const;
};

struct ReverbSpec {
  bool enabled = false;
  double t60_s = 0.3;
  double drr_db = 10.0;
};

struct SceneConfig {
  ArrayGeometry geometry;
  std::vector<SourceSpec> sources;
  int sample_rate = 16000;
  double duration_s = 1.0;
  double snr_db = std::numeric_limits<double>::infinity();
  ReverbSpec reverb;
  std::uint64_t seed = 1;
  StftConfig frame_clock;  // truth is sampled at this hop, frame centres

  void validate() const;
};

struct RenderedScene {
  AudioBuffer audio;  // noisy, reverberant mixture
  AudioBuffer clean;  // same without the additive noise
  GroundTruth truth;
};

RenderedScene render(const SceneConfig& cfg, Backend backend = Backend::openmp);

/// Windowed-sinc fractional delay of `signal` evaluated at (fractional)
/// sample position `position`, 32 taps.
double fractional_sample(std::span<const double> signal, double position);

/// Speech-like excitation: white noise under a syllable-rate (about 4 Hz)
/// envelope of random Hann bursts, with short random pauses. Unit RMS.
std::vector<double> speech_like_signal(std::size_t length, int sample_rate, std::uint64_t seed);

}  // namespace doatrack
