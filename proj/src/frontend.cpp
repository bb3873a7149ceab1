#include "doatrack/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "doatrack/fft.hpp"
#include "doatrack/parallel.hpp"

namespace doatrack {
namespace {

void analyze(const RealFft& fft, const std::vector<double>& window, const double* samples,
             std::vector<double>& scratch, Complex* out) {
  const int n = fft.size();
  for (int k = 0; k < n; ++k) scratch[k] = window[k] * samples[k];
  fft.forward(scratch, std::span<Complex>(out, fft.bins()));
}

}  // namespace

void AudioBuffer::validate() const {
  if (channels() < 2) throw Error("audio needs at least 2 channels");
  if (sample_rate <= 0) throw Error("sample rate must be positive");
}

void StftConfig::validate() const {
  if (window_length < 2) throw Error("window length must be >= 2");
  if (hop <= 0 || hop > window_length) throw Error("hop must be in (0, window_length]");
}

std::vector<double> make_window(const StftConfig& cfg) {
  std::vector<double> w(cfg.window_length, 1.0);
  const double n = cfg.window_length;
  for (int k = 0; k < cfg.window_length; ++k) {
    switch (cfg.window) {
      case WindowType::hamming_periodic:
        w[k] = 0.54 - 0.46 * std::cos(kTwoPi * k / n);
        break;
      case WindowType::hann_periodic:
        w[k] = 0.5 - 0.5 * std::cos(kTwoPi * k / n);
        break;
      case WindowType::rectangular:
        break;
    }
  }
  return w;
}

long frame_count(Eigen::Index length, const StftConfig& cfg) {
  if (length < cfg.window_length) return 0;
  return (length - cfg.window_length) / cfg.hop + 1;
}

Spectrogram::Spectrogram(int channels, long frames, const StftConfig& cfg)
    : channels_(channels),
      frames_(frames),
      bins_(cfg.num_bins()),
      config_(cfg),
      data_(static_cast<std::size_t>(channels) * frames * cfg.num_bins()) {}

std::size_t FrameLabels::speech_count() const {
  return static_cast<std::size_t>(std::count(speech_.begin(), speech_.end(), 1));
}

Spectrogram stft(const AudioBuffer& audio, const StftConfig& cfg, Backend backend) {
  cfg.validate();
  if (audio.length() < cfg.window_length) throw Error("insufficient samples");
  const long frames = frame_count(audio.length(), cfg);
  const int channels = audio.channels();
  Spectrogram spec(channels, frames, cfg);
  const RealFft fft(cfg.window_length);
  const auto window = make_window(cfg);

  parallel_for(backend, channels * frames, [&](long job) {
    const int i = static_cast<int>(job / frames);
    const long t = job % frames;
    thread_local std::vector<double> scratch;
    scratch.resize(cfg.window_length);
    analyze(fft, window, audio.samples.row(i).data() + t * cfg.hop, scratch,
            spec.frame(i, t).data());
  });
  return spec;
}

// ---------------------------------------------------------------------------

NoiseTracker::NoiseTracker(int channels, int bins, const FrontendConfig& cfg,
                           const StftConfig& stft, int sample_rate)
    : channels_(channels),
      bins_(bins),
      smoothing_(cfg.power_smoothing),
      ema_(std::exp(-static_cast<double>(stft.hop) / (sample_rate * cfg.floor_time_constant_s))),
      ratio_(cfg.speech_ratio),
      freq_halfwidth_(cfg.frequency_smoothing),
      floor_(static_cast<std::size_t>(channels) * bins, -1.0),
      smoothed_(bins, 0.0) {}

void NoiseTracker::label(std::span<const Complex> frame, std::span<std::uint8_t> labels) {
  for (int f = 0; f < bins_; ++f) {
    const int lo = std::max(0, f - freq_halfwidth_);
    const int hi = std::min(bins_ - 1, f + freq_halfwidth_);
    double power = 0.0;
    double floor2 = 0.0;
    bool initialized = true;
    for (int i = 0; i < channels_; ++i) {
      for (int g = lo; g <= hi; ++g) {
        const std::size_t k = static_cast<std::size_t>(i) * bins_ + g;
        power += std::norm(frame[k]);
        if (floor_[k] < 0.0) initialized = false;
        floor2 += floor_[k] * floor_[k];
      }
    }
    const double cells = static_cast<double>(channels_ * (hi - lo + 1));
    power /= cells;
    floor2 /= cells;
    smoothed_[f] = frames_ == 0 ? power : smoothing_ * smoothed_[f] + (1.0 - smoothing_) * power;
    labels[f] = (initialized && smoothed_[f] > ratio_ * floor2) ? 1 : 0;
  }
}

void NoiseTracker::update_floor(std::span<const Complex> frame,
                                std::span<const std::uint8_t> labels) {
  for (int i = 0; i < channels_; ++i) {
    for (int f = 0; f < bins_; ++f) {
      if (labels[f]) continue;
      const std::size_t k = static_cast<std::size_t>(i) * bins_ + f;
      const double mag = std::abs(frame[k]);
      floor_[k] = floor_[k] < 0.0 ? mag : ema_ * floor_[k] + (1.0 - ema_) * mag;
    }
  }
}

void NoiseTracker::subtract(std::span<const Complex> frame, std::span<const std::uint8_t> labels,
                            std::span<Complex> denoised) const {
  for (int i = 0; i < channels_; ++i) {
    for (int f = 0; f < bins_; ++f) {
      const std::size_t k = static_cast<std::size_t>(i) * bins_ + f;
      const Complex x = frame[k];
      if (!labels[f]) {
        denoised[k] = x;
        continue;
      }
      const double mag = std::abs(x);
      const double fl = std::max(floor_[k], 0.0);
      denoised[k] = (mag > fl && mag > 0.0) ? x * ((mag - fl) / mag) : Complex{};
    }
  }
}

void NoiseTracker::process(std::span<const Complex> frame, std::span<std::uint8_t> labels,
                           std::span<Complex> denoised) {
  label(frame, labels);
  if (!denoised.empty()) subtract(frame, labels, denoised);
  update_floor(frame, labels);
  ++frames_;
}

void NoiseTracker::subtract_with_labels(std::span<const Complex> frame,
                                        std::span<const std::uint8_t> labels,
                                        std::span<Complex> denoised) {
  subtract(frame, labels, denoised);
  update_floor(frame, labels);
  ++frames_;
}

namespace {

// Gathers frame t of every channel into a contiguous channels x bins block.
void gather(const Spectrogram& spec, long t, std::vector<Complex>& out) {
  const int bins = spec.bins();
  for (int i = 0; i < spec.channels(); ++i) {
    auto src = spec.frame(i, t);
    std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(i) * bins);
  }
}

}  // namespace

FrameLabels classify_frames(const Spectrogram& spec, const FrontendConfig& cfg, int sample_rate) {
  FrameLabels labels(spec.frames(), spec.bins());
  NoiseTracker tracker(spec.channels(), spec.bins(), cfg, spec.config(), sample_rate);
  std::vector<Complex> frame(static_cast<std::size_t>(spec.channels()) * spec.bins());
  std::vector<std::uint8_t> lab(spec.bins());
  for (long t = 0; t < spec.frames(); ++t) {
    gather(spec, t, frame);
    tracker.process(frame, lab, {});
    for (int f = 0; f < spec.bins(); ++f) labels.set(t, f, lab[f] != 0);
  }
  return labels;
}

Spectrogram spectral_subtract(const Spectrogram& spec, const FrameLabels& labels,
                              const FrontendConfig& cfg, int sample_rate) {
  if (labels.frames() != spec.frames() || labels.bins() != spec.bins())
    throw Error("label dimensions do not match the spectrogram");
  Spectrogram out(spec.channels(), spec.frames(), spec.config());
  NoiseTracker tracker(spec.channels(), spec.bins(), cfg, spec.config(), sample_rate);
  const int bins = spec.bins();
  std::vector<Complex> frame(static_cast<std::size_t>(spec.channels()) * bins);
  std::vector<Complex> result(frame.size());
  std::vector<std::uint8_t> lab(bins);
  for (long t = 0; t < spec.frames(); ++t) {
    gather(spec, t, frame);
    for (int f = 0; f < bins; ++f) lab[f] = labels.speech(t, f) ? 1 : 0;
    tracker.subtract_with_labels(frame, lab, result);
    for (int i = 0; i < spec.channels(); ++i) {
      std::copy_n(result.begin() + static_cast<std::ptrdiff_t>(i) * bins, bins,
                  out.frame(i, t).begin());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

const RealFft& shared_fft(int size) {
  thread_local std::unique_ptr<RealFft> fft;
  if (!fft || fft->size() != size) fft = std::make_unique<RealFft>(size);
  return *fft;
}

}  // namespace

StreamingStft::StreamingStft(int channels, const StftConfig& cfg)
    : channels_(channels),
      cfg_(cfg),
      buffer_(static_cast<std::size_t>(channels) * cfg.window_length, 0.0),
      window_(make_window(cfg)) {
  cfg.validate();
}

bool StreamingStft::push(const SignalMatrix& block, std::span<Complex> out) {
  const int w = cfg_.window_length;
  const int hop = cfg_.hop;
  if (block.rows() != channels_ || block.cols() != hop)
    throw Error("streaming block must be channels x hop");
  for (int i = 0; i < channels_; ++i) {
    double* buf = buffer_.data() + static_cast<std::size_t>(i) * w;
    std::move(buf + hop, buf + w, buf);
    for (int k = 0; k < hop; ++k) buf[w - hop + k] = block(i, k);
  }
  filled_ += hop;
  if (filled_ < w) return false;
  const RealFft& fft = shared_fft(w);
  std::vector<double> scratch(w);
  for (int i = 0; i < channels_; ++i) {
    analyze(fft, window_, buffer_.data() + static_cast<std::size_t>(i) * w, scratch,
            out.data() + static_cast<std::size_t>(i) * cfg_.num_bins());
  }
  return true;
}

}  // namespace doatrack
