#include "doatrack/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <cereal/archives/binary.hpp>

#include "doatrack/archive.hpp"

namespace doatrack {

void PipelineConfig::validate() const {
  if (sample_rate <= 0) throw Error("sample rate must be positive");
  stft.validate();
  if (stft.window_length % stft.hop != 0)
    throw Error("streaming requires window_length to be a multiple of hop");
  ctf.validate();
  localizer.validate();
  tracker.validate();
  if (grid_size < 1) throw Error("grid_size must be >= 1");
  if (!(metric_gate_deg > 0.0)) throw Error("metric gate must be positive");
  if (ctf.min_freq_hz < 0.0) throw Error("min_freq_hz must be >= 0");
}

std::vector<int> localization_bins(const PipelineConfig& cfg, const ArrayGeometry& geom) {
  const int w = cfg.stft.window_length;
  const double resolution = static_cast<double>(cfg.sample_rate) / w;
  const double top_hz = cfg.ctf.max_freq_hz ? *cfg.ctf.max_freq_hz : geom.aliasing_frequency();
  const int lo = std::max(1, static_cast<int>(std::ceil(cfg.ctf.min_freq_hz / resolution)));
  const int hi = std::min(cfg.stft.num_bins() - 2, static_cast<int>(std::floor(top_hz / resolution)));
  std::vector<int> bins;
  for (int f = lo; f <= hi; ++f) bins.push_back(f);
  if (bins.empty()) throw Error("no STFT bins inside the localization band");
  return bins;
}

Pipeline::Pipeline(PipelineConfig cfg, ArrayGeometry geom)
    : cfg_((cfg.validate(), std::move(cfg))),
      geom_((geom.validate(), std::move(geom))),
      stft_(geom_.channels(), cfg_.stft),
      noise_(geom_.channels(), cfg_.stft.num_bins(), cfg_.frontend, cfg_.stft, cfg_.sample_rate),
      bank_(geom_.channels(), cfg_.stft.num_bins(), localization_bins(cfg_, geom_), cfg_.ctf),
      localizer_(precompute_means(geom_, default_azimuths(cfg_.grid_size), cfg_.stft.num_bins(),
                                  cfg_.stft.window_length, cfg_.sample_rate,
                                  cfg_.localizer.mean_magnitude, cfg_.ctf.reference_channel),
                 cfg_.localizer),
      tracker_(cfg_.tracker, default_azimuths(cfg_.grid_size)),
      frame_buf_(static_cast<std::size_t>(geom_.channels()) * cfg_.stft.num_bins()),
      denoised_buf_(frame_buf_.size()),
      label_buf_(cfg_.stft.num_bins()) {}

double Pipeline::frame_time(long frame) const {
  return (static_cast<double>(frame) * cfg_.stft.hop + cfg_.stft.window_length / 2.0) /
         cfg_.sample_rate;
}

std::optional<FrameOutput> Pipeline::step(const SignalMatrix& block) {
  if (!stft_.push(block, frame_buf_)) return std::nullopt;
  noise_.process(frame_buf_, label_buf_, denoised_buf_);

  FrameOutput out;
  out.frame = frames_;
  out.time_s = frame_time(frames_);
  out.features = bank_.process_frame(denoised_buf_, label_buf_, cfg_.backend);
  out.weights = localizer_.update(out.features, cfg_.backend).values();
  out.peaks = localizer_.peaks();
  const double possible = static_cast<double>(bank_.active_bins().size()) * (geom_.channels() - 1);
  const bool evidence = static_cast<double>(out.features.size()) >=
                        cfg_.tracker.min_evidence_fraction * possible;
  out.tracks = tracker_.step(out.weights, evidence).tracks;
  ++frames_;
  return out;
}

void Pipeline::save(std::ostream& os) const {
  cereal::BinaryOutputArchive ar(os);
  ar(cfg_.fingerprint(), frames_, stft_, noise_, bank_, localizer_, tracker_);
}

void Pipeline::restore(std::istream& is) {
  cereal::BinaryInputArchive ar(is);
  std::uint64_t fingerprint = 0;
  ar(fingerprint);
  if (fingerprint != cfg_.fingerprint()) throw Error("snapshot was taken with a different configuration");
  ar(frames_, stft_, noise_, bank_, localizer_, tracker_);
}

RunResult run(const AudioBuffer& audio, const PipelineConfig& cfg, const ArrayGeometry& geom,
              long max_frames) {
  RunResult result;
  result.azimuths = default_azimuths(cfg.grid_size);
  if (audio.length() == 0) return result;
  if (audio.channels() != geom.channels())
    throw Error("audio has " + std::to_string(audio.channels()) + " channels, geometry has " +
                std::to_string(geom.channels()));
  if (audio.sample_rate != cfg.sample_rate) throw Error("audio sample rate differs from config");

  Pipeline pipeline(cfg, geom);
  const int hop = cfg.stft.hop;
  for (Eigen::Index start = 0; start + hop <= audio.length(); start += hop) {
    if (max_frames >= 0 && pipeline.frames() >= max_frames) break;
    const SignalMatrix block = audio.samples.middleCols(start, hop);
    auto out = pipeline.step(block);
    if (!out) continue;
    result.heatmap.push_back(std::move(out->weights));
    result.peaks.push_back(std::move(out->peaks));
    for (const auto& t : out->tracks) result.tracks.push_back({out->frame, out->time_s, t});
    result.features.push_back(std::move(out->features));
    result.frame_times.push_back(out->time_s);
  }
  return result;
}

std::vector<EstimateFrame> track_estimates(const RunResult& result) {
  std::vector<EstimateFrame> out(result.heatmap.size());
  for (const auto& r : result.tracks)
    if (r.track.active) out.at(r.frame).push_back({r.track.id, r.track.azimuth_deg});
  return out;
}

std::vector<EstimateFrame> peak_estimates(const RunResult& result) {
  std::vector<EstimateFrame> out(result.peaks.size());
  for (std::size_t t = 0; t < result.peaks.size(); ++t)
    for (const auto& p : result.peaks[t]) out[t].push_back({-1, p.azimuth_deg});
  return out;
}

}  // namespace doatrack
