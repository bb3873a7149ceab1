#include "doatrack/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "doatrack/fft.hpp"
#include "doatrack/io.hpp"
#include "doatrack/parallel.hpp"

namespace doatrack {
namespace {

constexpr int kHalfTaps = 16;

// Independent stream per (purpose, source, channel).
std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t purpose, std::uint64_t a,
                         std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(purpose), static_cast<std::uint32_t>(a),
                    static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

double mean_power(std::span<const double> x) {
  if (x.empty()) return 0.0;
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

std::vector<double> source_excitation(const SourceSpec& src, std::size_t length, int rate,
                                      std::uint64_t seed, std::size_t index) {
  std::vector<double> s;
  switch (src.signal) {
    case SourceSignal::white_noise: {
      auto rng = make_rng(seed, 1, index, 0);
      std::normal_distribution<double> normal;
      s.resize(length);
      for (auto& v : s) v = normal(rng);
      break;
    }
    case SourceSignal::speech_like:
      s = speech_like_signal(length, rate, seed ^ (0x9e3779b97f4a7c15ULL * (index + 1)));
      break;
    case SourceSignal::file: {
      const AudioBuffer file = read_wav(src.file, rate);
      if (file.length() == 0) throw Error("source file is empty: " + src.file);
      s.resize(length);
      for (std::size_t n = 0; n < length; ++n) s[n] = file.samples(0, static_cast<Eigen::Index>(n % file.length()));
      break;
    }
  }
  return s;
}

std::vector<double> reverb_tail(const ReverbSpec& spec, int rate, std::mt19937_64& rng) {
  const auto length = static_cast<std::size_t>(std::max(1.0, std::ceil(spec.t60_s * rate)));
  std::normal_distribution<double> normal;
  std::vector<double> tail(length + 1, 0.0);
  // 60 dB amplitude decay over t60.
  const double decay = std::log(1000.0) / (spec.t60_s * rate);
  for (std::size_t n = 1; n <= length; ++n) tail[n] = normal(rng) * std::exp(-decay * n);
  double energy = 0.0;
  for (double v : tail) energy += v * v;
  const double target = std::pow(10.0, -spec.drr_db / 10.0);  // direct path has unit energy
  if (energy > 0.0) {
    const double g = std::sqrt(target / energy);
    for (auto& v : tail) v *= g;
  }
  return tail;
}

}  // namespace

double SourceSpec::azimuth_at(double time_s) const {
  if (trajectory.empty()) throw Error("source has no trajectory");
  if (time_s <= trajectory.front().time_s) return wrap_degrees(trajectory.front().azimuth_deg);
  if (time_s >= trajectory.back().time_s) return wrap_degrees(trajectory.back().azimuth_deg);
  for (std::size_t k = 1; k < trajectory.size(); ++k) {
    const auto& a = trajectory[k - 1];
    const auto& b = trajectory[k];
    if (time_s > b.time_s) continue;
    const double span = b.time_s - a.time_s;
    const double frac = span > 0.0 ? (time_s - a.time_s) / span : 1.0;
    const double delta = wrap_degrees(b.azimuth_deg - a.azimuth_deg);
    return wrap_degrees(a.azimuth_deg + frac * delta);
  }
  return wrap_degrees(trajectory.back().azimuth_deg);
}

bool SourceSpec::active_at(double time_s) const {
  if (activity.empty()) return true;
  return std::any_of(activity.begin(), activity.end(), [&](const Interval& iv) {
    return time_s >= iv.start_s && time_s < iv.end_s;
  });
}

void SceneConfig::validate() const {
  geometry.validate();
  if (!(duration_s > 0.0)) throw Error("scene duration must be positive");
  if (sample_rate <= 0) throw Error("sample rate must be positive");
  frame_clock.validate();
  if (std::isnan(snr_db)) throw Error("snr_db is NaN");
  if (reverb.enabled && !(reverb.t60_s > 0.0)) throw Error("reverb t60 must be positive");
  for (const auto& s : sources) {
    if (s.trajectory.empty()) throw Error("source " + std::to_string(s.id) + " has no trajectory");
    for (std::size_t k = 1; k < s.trajectory.size(); ++k)
      if (s.trajectory[k].time_s < s.trajectory[k - 1].time_s)
        throw Error("trajectory times must be non-decreasing");
    for (const auto& iv : s.activity)
      if (!(iv.end_s > iv.start_s)) throw Error("activity interval must have end > start");
    if (s.signal == SourceSignal::file && s.file.empty()) throw Error("file source without path");
  }
}

double fractional_sample(std::span<const double> signal, double position) {
  const auto base = static_cast<long>(std::floor(position));
  const double frac = position - static_cast<double>(base);
  if (frac == 0.0) {
    return (base >= 0 && base < static_cast<long>(signal.size())) ? signal[base] : 0.0;
  }
  double acc = 0.0;
  for (long k = base - kHalfTaps + 1; k <= base + kHalfTaps; ++k) {
    if (k < 0 || k >= static_cast<long>(signal.size())) continue;
    const double x = position - static_cast<double>(k);
    const double sinc = std::sin(kPi * x) / (kPi * x);
    const double window = 0.5 * (1.0 + std::cos(kPi * x / kHalfTaps));
    acc += signal[k] * sinc * window;
  }
  return acc;
}

std::vector<double> speech_like_signal(std::size_t length, int sample_rate, std::uint64_t seed) {
  auto rng = make_rng(seed, 2, 0, 0);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  std::vector<double> s(length);
  for (auto& v : s) v = normal(rng);

  // Syllable envelope: back-to-back Hann bursts of 150-350 ms (about 4 Hz)
  // with random peak amplitude.
  std::size_t n = 0;
  while (n < length) {
    const auto span = static_cast<std::size_t>((0.15 + 0.2 * unit(rng)) * sample_rate);
    const double amplitude = 0.5 + unit(rng);
    for (std::size_t k = 0; k < span && n + k < length; ++k) {
      const double phase = (static_cast<double>(k) + 0.5) / static_cast<double>(span);
      s[n + k] *= amplitude * std::sin(kPi * phase) * std::sin(kPi * phase);
    }
    n += span;
  }

  // Short pauses: 40-120 ms every 0.3-1.0 s.
  double t = 0.3 + 0.7 * unit(rng);
  const double total = static_cast<double>(length) / sample_rate;
  while (t < total) {
    const double gap = 0.04 + 0.08 * unit(rng);
    const auto a = static_cast<std::size_t>(t * sample_rate);
    const auto b = std::min(length, static_cast<std::size_t>((t + gap) * sample_rate));
    std::fill(s.begin() + static_cast<std::ptrdiff_t>(a), s.begin() + static_cast<std::ptrdiff_t>(b), 0.0);
    t += gap + 0.3 + 0.7 * unit(rng);
  }
  const double rms = std::sqrt(mean_power(s));
  if (rms > 0.0)
    for (auto& v : s) v /= rms;
  return s;
}

RenderedScene render(const SceneConfig& cfg, Backend backend) {
  cfg.validate();
  const int rate = cfg.sample_rate;
  const int channels = cfg.geometry.channels();
  const auto length = static_cast<std::size_t>(std::llround(cfg.duration_s * rate));
  const long pad = static_cast<long>(std::ceil(cfg.geometry.max_spacing() / cfg.geometry.speed_of_sound * rate)) +
                   2 * kHalfTaps;

  // Excitations carry `pad` samples of lead-in so early delayed reads see data.
  const std::size_t n_src = cfg.sources.size();
  std::vector<std::vector<double>> excitation(n_src);
  std::vector<std::vector<double>> azimuth(n_src);
  parallel_for(backend, static_cast<long>(n_src), [&](long s) {
    const SourceSpec& src = cfg.sources[s];
    auto x = source_excitation(src, length + 2 * pad, rate, cfg.seed, s);
    const double gain = std::pow(10.0, src.gain_db / 20.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double t = (static_cast<double>(n) - pad) / rate;
      x[n] = src.active_at(t) ? gain * x[n] : 0.0;
    }
    excitation[s] = std::move(x);
    auto& az = azimuth[s];
    az.resize(length);
    for (std::size_t n = 0; n < length; ++n) az[n] = src.azimuth_at(static_cast<double>(n) / rate);
  });

  // One image per (source, channel); summed afterwards in a fixed order.
  std::vector<std::vector<double>> images(n_src * channels);
  parallel_for(backend, static_cast<long>(images.size()), [&](long job) {
    const std::size_t s = static_cast<std::size_t>(job) / channels;
    const int i = static_cast<int>(job % channels);
    const Eigen::Vector3d& p = cfg.geometry.positions[i];
    std::vector<double> y(length);
    for (std::size_t n = 0; n < length; ++n) {
      const double delay = -p.dot(azimuth_direction(azimuth[s][n])) / cfg.geometry.speed_of_sound;
      y[n] = fractional_sample(excitation[s], static_cast<double>(n + pad) - delay * rate);
    }
    if (cfg.reverb.enabled) {
      auto rng = make_rng(cfg.seed, 3, s, static_cast<std::uint64_t>(i));
      const auto tail = reverb_tail(cfg.reverb, rate, rng);
      const auto wet = fft_convolve(y, tail);
      for (std::size_t n = 0; n < length; ++n) y[n] += wet[n];
    }
    images[job] = std::move(y);
  });

  RenderedScene out;
  out.clean.sample_rate = rate;
  out.clean.samples = SignalMatrix::Zero(channels, static_cast<Eigen::Index>(length));
  for (std::size_t s = 0; s < n_src; ++s)
    for (int i = 0; i < channels; ++i)
      for (std::size_t n = 0; n < length; ++n)
        out.clean.samples(i, static_cast<Eigen::Index>(n)) += images[s * channels + i][n];

  out.audio = out.clean;
  if (std::isfinite(cfg.snr_db)) {
    const double signal_power = out.clean.samples.squaredNorm() /
                                static_cast<double>(std::max<std::size_t>(1, length * channels));
    const double noise_std = std::sqrt(signal_power / std::pow(10.0, cfg.snr_db / 10.0));
    parallel_for(backend, channels, [&](long i) {
      auto rng = make_rng(cfg.seed, 4, static_cast<std::uint64_t>(i), 0);
      std::normal_distribution<double> normal(0.0, noise_std);
      for (std::size_t n = 0; n < length; ++n)
        out.audio.samples(i, static_cast<Eigen::Index>(n)) += normal(rng);
    });
  }

  const long frames = frame_count(static_cast<Eigen::Index>(length), cfg.frame_clock);
  out.truth.reserve(frames);
  for (long t = 0; t < frames; ++t) {
    TruthFrame f;
    f.time_s = (static_cast<double>(t) * cfg.frame_clock.hop + cfg.frame_clock.window_length / 2.0) / rate;
    for (const auto& src : cfg.sources)
      f.speakers.push_back({src.id, src.azimuth_at(f.time_s), src.active_at(f.time_s)});
    out.truth.push_back(std::move(f));
  }
  return out;
}

}  // namespace doatrack
