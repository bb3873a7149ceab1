#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "doatrack/common.hpp"

namespace doatrack {

/// Channels are rows, samples are columns.
using SignalMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct AudioBuffer {
  SignalMatrix samples;
  int sample_rate = 16000;

  int channels() const { return static_cast<int>(samples.rows()); }
  Eigen::Index length() const { return samples.cols(); }

  /// Throws Error unless there are at least two channels and a positive rate.
  void validate() const;
};

enum class WindowType { hamming_periodic, hann_periodic, rectangular };

struct StftConfig {
  int window_length = 256;  // 16 ms at 16 kHz
  int hop = 128;            // 8 ms at 16 kHz
  WindowType window = WindowType::hamming_periodic;

  int num_bins() const { return window_length / 2 + 1; }
  void validate() const;
};

std::vector<double> make_window(const StftConfig& cfg);

/// Number of complete analysis frames in a signal of `length` samples.
long frame_count(Eigen::Index length, const StftConfig& cfg);

/// Complex one-sided STFT, stored channel-major: index (i * T + t) * F + f.
class Spectrogram {
 public:
  Spectrogram() = default;
  Spectrogram(int channels, long frames, const StftConfig& cfg);

  int channels() const { return channels_; }
  long frames() const { return frames_; }
  int bins() const { return bins_; }
  const StftConfig& config() const { return config_; }

  Complex& at(int channel, long frame, int bin) {
    return data_[(static_cast<std::size_t>(channel) * frames_ + frame) * bins_ + bin];
  }
  const Complex& at(int channel, long frame, int bin) const {
    return data_[(static_cast<std::size_t>(channel) * frames_ + frame) * bins_ + bin];
  }
  std::span<Complex> frame(int channel, long t) {
    return {data_.data() + (static_cast<std::size_t>(channel) * frames_ + t) * bins_,
            static_cast<std::size_t>(bins_)};
  }
  std::span<const Complex> frame(int channel, long t) const {
    return {data_.data() + (static_cast<std::size_t>(channel) * frames_ + t) * bins_,
            static_cast<std::size_t>(bins_)};
  }
  const std::vector<Complex>& data() const { return data_; }
  std::vector<Complex>& data() { return data_; }

 private:
  int channels_ = 0;
  long frames_ = 0;
  int bins_ = 0;
  StftConfig config_;
  std::vector<Complex> data_;
};

/// Per (frame, bin) speech/noise decision; true means speech.
class FrameLabels {
 public:
  FrameLabels() = default;
  FrameLabels(long frames, int bins) : frames_(frames), bins_(bins), speech_(frames * bins, 0) {}

  long frames() const { return frames_; }
  int bins() const { return bins_; }
  bool speech(long t, int f) const { return speech_[t * bins_ + f] != 0; }
  void set(long t, int f, bool is_speech) { speech_[t * bins_ + f] = is_speech ? 1 : 0; }
  std::size_t speech_count() const;

 private:
  long frames_ = 0;
  int bins_ = 0;
  std::vector<std::uint8_t> speech_;
};

/// Noise-floor tracking and subtraction tunables.
struct FrontendConfig {
  double floor_time_constant_s = 1.0;
  double speech_ratio = 2.0;        // beta: speech iff smoothed power > beta * floor^2
  double power_smoothing = 0.5;     // recursive smoothing of the detection statistic
  int frequency_smoothing = 1;      // half-width of the bin neighbourhood
};

Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg, Backend backend = Backend::openmp);

FrameLabels classify_frames(const Spectrogram& spec, const FrontendConfig& cfg, int sample_rate);

/// Magnitude subtraction of the running noise floor on speech cells; noise
/// cells pass through unchanged (downstream consumers skip them via labels).
Spectrogram spectral_subtract(const Spectrogram& spec, const FrameLabels& labels,
                              const FrontendConfig& cfg, int sample_rate);

/// Streaming noise tracker shared by the batch functions and the online
/// pipeline. One call per STFT frame.
class NoiseTracker {
 public:
  NoiseTracker() = default;
  NoiseTracker(int channels, int bins, const FrontendConfig& cfg, const StftConfig& stft,
               int sample_rate);

  /// Labels `frame` (channels x bins, row-major) and, when `denoised` is
  /// non-empty, writes the spectrally subtracted frame into it.
  void process(std::span<const Complex> frame, std::span<std::uint8_t> labels,
               std::span<Complex> denoised);

  /// Same recursion with externally supplied labels (used by spectral_subtract).
  void subtract_with_labels(std::span<const Complex> frame, std::span<const std::uint8_t> labels,
                            std::span<Complex> denoised);

  std::span<const double> floor() const { return floor_; }
  long frames_seen() const { return frames_; }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(channels_, bins_, smoothing_, ema_, ratio_, freq_halfwidth_, frames_, floor_, smoothed_);
  }

 private:
  void label(std::span<const Complex> frame, std::span<std::uint8_t> labels);
  void update_floor(std::span<const Complex> frame, std::span<const std::uint8_t> labels);
  void subtract(std::span<const Complex> frame, std::span<const std::uint8_t> labels,
                std::span<Complex> denoised) const;

  int channels_ = 0;
  int bins_ = 0;
  double smoothing_ = 0.5;
  double ema_ = 0.0;
  double ratio_ = 2.0;
  int freq_halfwidth_ = 1;
  long frames_ = 0;
  std::vector<double> floor_;     // channels x bins magnitude floor
  std::vector<double> smoothed_;  // per-bin smoothed detection statistic
};

/// Online STFT: accepts hop-sized blocks and emits a frame once a full
/// window is buffered. Frame t covers samples [t*hop, t*hop + window).
class StreamingStft {
 public:
  StreamingStft() = default;
  StreamingStft(int channels, const StftConfig& cfg);

  /// Appends `block` (channels x hop). Returns true and fills `out`
  /// (channels x bins, row-major) when a frame is complete.
  bool push(const SignalMatrix& block, std::span<Complex> out);

  template <class Archive>
  void serialize(Archive& ar) {
    ar(channels_, filled_, buffer_);
  }

 private:
  int channels_ = 0;
  StftConfig cfg_;
  long filled_ = 0;
  std::vector<double> buffer_;  // channels x window, oldest sample first
  std::vector<double> window_;
};

}  // namespace doatrack
