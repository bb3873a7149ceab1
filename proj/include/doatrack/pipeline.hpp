#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include "doatrack/dprtf.hpp"
#include "doatrack/frontend.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/metrics.hpp"
#include "doatrack/tracker.hpp"

namespace doatrack {

struct PipelineConfig {
  int sample_rate = 16000;
  StftConfig stft;
  FrontendConfig frontend;
  CtfConfig ctf;
  LocalizerConfig localizer;
  TrackerConfig tracker;
  int grid_size = 72;
  double metric_gate_deg = 15.0;
  Backend backend = Backend::openmp;

  void validate() const;
  /// Stable 64-bit hash of every parameter, written into output files.
  std::uint64_t fingerprint() const;
};

/// STFT bins used for localization: [min_freq, aliasing limit], never DC or
/// Nyquist.
std::vector<int> localization_bins(const PipelineConfig& cfg, const ArrayGeometry& geom);

struct FrameOutput {
  long frame = 0;
  double time_s = 0.0;  // frame centre
  std::vector<double> weights;
  std::vector<Peak> peaks;
  std::vector<TrackEstimate> tracks;
  FeatureFrame features;
};

/// Online frontend -> DP-RTF -> CGMM localizer -> tracker chain. One
/// instance is single-writer; feed it hop-sized blocks in order.
class Pipeline {
 public:
  Pipeline(PipelineConfig cfg, ArrayGeometry geom);

  /// Consumes one hop of samples (channels x hop). Returns the outputs of the
  /// frame completed by this block, if any.
  std::optional<FrameOutput> step(const SignalMatrix& block);

  long frames() const { return frames_; }
  const PipelineConfig& config() const { return cfg_; }
  const ArrayGeometry& geometry() const { return geom_; }
  const OnlineLocalizer& localizer() const { return localizer_; }
  const Tracker& tracker() const { return tracker_; }

  /// Binary snapshot of all mutable state; restore requires an instance
  /// built from the same configuration and geometry.
  void save(std::ostream& os) const;
  void restore(std::istream& is);

  double frame_time(long frame) const;

 private:
  PipelineConfig cfg_;
  ArrayGeometry geom_;
  StreamingStft stft_;
  NoiseTracker noise_;
  DpRtfBank bank_;
  OnlineLocalizer localizer_;
  Tracker tracker_;
  long frames_ = 0;
  std::vector<Complex> frame_buf_;
  std::vector<Complex> denoised_buf_;
  std::vector<std::uint8_t> label_buf_;
};

struct TrackRecord {
  long frame = 0;
  double time_s = 0.0;
  TrackEstimate track;
};

struct RunResult {
  std::vector<double> azimuths;
  std::vector<std::vector<double>> heatmap;        // frames x candidates
  std::vector<std::vector<Peak>> peaks;            // per frame
  std::vector<TrackRecord> tracks;                 // all frames, active and sleeping
  std::vector<FeatureFrame> features;              // per frame
  std::vector<double> frame_times;
};

/// Folds Pipeline::step over the whole buffer. `max_frames` < 0 means all.
RunResult run(const AudioBuffer& audio, const PipelineConfig& cfg, const ArrayGeometry& geom,
              long max_frames = -1);

/// Active tracks per frame as metric estimates.
std::vector<EstimateFrame> track_estimates(const RunResult& result);
/// Peaks per frame as identity-less metric estimates.
std::vector<EstimateFrame> peak_estimates(const RunResult& result);

}  // namespace doatrack
