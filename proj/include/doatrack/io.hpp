#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "doatrack/frontend.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/metrics.hpp"
#include "doatrack/pipeline.hpp"
#include "doatrack/simulator.hpp"

namespace doatrack {

enum class Mode { localize, track, evaluate, simulate };

struct RunManifest {
  std::vector<std::filesystem::path> inputs;
  std::filesystem::path config;
  std::filesystem::path output;
  Mode mode = Mode::track;
  std::uint64_t seed = 1;

  /// Throws unless every input (and the config, when given) exists.
  void validate() const;
};

// ---- audio ---------------------------------------------------------------

/// Reads PCM 16/24/32-bit or IEEE float WAV, normalizes to [-1, 1] and
/// resamples to `target_rate` (no resampling when target_rate <= 0).
AudioBuffer read_wav(const std::filesystem::path& path, int target_rate = 16000);

enum class WavFormat { pcm16, float32 };
void write_wav(const std::filesystem::path& path, const AudioBuffer& audio,
               WavFormat format = WavFormat::float32);

/// Windowed-sinc polyphase rational resampler.
SignalMatrix resample(const SignalMatrix& in, int from_rate, int to_rate);

// ---- geometry, truth, tracks ----------------------------------------------

ArrayGeometry read_geometry(const std::filesystem::path& path);
ArrayGeometry parse_geometry(std::istream& is);
void write_geometry(std::ostream& os, const ArrayGeometry& geom);

GroundTruth read_truth(const std::filesystem::path& path);
void write_truth(std::ostream& os, const GroundTruth& truth);

/// Frame clock header carried by track files so evaluation can align truth.
struct FrameClock {
  long frames = 0;
  int hop = 128;
  int window = 256;
  int sample_rate = 16000;

  double time(long frame) const;
};

struct TrackFile {
  FrameClock clock;
  std::uint64_t fingerprint = 0;
  std::vector<TrackRecord> records;
};

void write_tracks(std::ostream& os, const TrackFile& file);
TrackFile read_tracks(std::istream& is);
TrackFile read_tracks(const std::filesystem::path& path);

/// Active records per frame as evaluation estimates.
std::vector<EstimateFrame> estimates_from_tracks(const TrackFile& file);

/// Per-frame spectrum peaks (localization mode output).
struct PeakFile {
  FrameClock clock;
  std::uint64_t fingerprint = 0;
  std::vector<std::vector<Peak>> peaks;
};

void write_peaks(std::ostream& os, const PeakFile& file);
PeakFile read_peaks(std::istream& is);

/// Reads either a track file or a peak file as evaluation estimates, along
/// with its frame times.
struct EstimateSequence {
  std::vector<EstimateFrame> frames;
  std::vector<double> times;
  std::uint64_t fingerprint = 0;  // of the run that produced the file
};
EstimateSequence read_estimates(const std::filesystem::path& path);

// ---- configuration ---------------------------------------------------------

/// Sectioned key-value (INI) pipeline configuration; missing keys keep the
/// defaults, unknown keys are errors.
PipelineConfig read_pipeline_config(const std::filesystem::path& path);
PipelineConfig parse_pipeline_config(std::istream& is);
void write_pipeline_config(std::ostream& os, const PipelineConfig& cfg);

/// Report files for `evaluate`, written next to each other under `dir`.
void write_report(const std::filesystem::path& dir, const EvalReport& report,
                  std::uint64_t fingerprint);

/// Scene description; `geometry` may be inline (`mics = x y z; ...`) or a
/// path relative to the scene file.
SceneConfig read_scene_config(const std::filesystem::path& path);
SceneConfig parse_scene_config(std::istream& is, const std::filesystem::path& base_dir = {});

// ---- results ---------------------------------------------------------------

void write_heatmap(std::ostream& os, const RunResult& result, std::uint64_t fingerprint);

/// heatmap.csv, tracks.csv (or peaks.csv in localization mode) and, with a
/// report, report.txt / report.json / report_frames.csv. Every file carries
/// the config fingerprint.
void write_results(const std::filesystem::path& dir, const RunResult& result,
                   const PipelineConfig& cfg, bool tracking, const EvalReport* report = nullptr);

TrackFile make_track_file(const RunResult& result, const PipelineConfig& cfg);
PeakFile make_peak_file(const RunResult& result, const PipelineConfig& cfg);

}  // namespace doatrack
