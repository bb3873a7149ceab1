#include <doctest.h>

#include <random>

#include "doatrack/frontend.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/pipeline.hpp"
#include "support.hpp"

// Every OpenMP kernel is checked bitwise against its serial reference.

using namespace doatrack;

namespace {

FeatureFrame random_features(std::mt19937_64& rng, int bins, int channels) {
  FeatureFrame f;
  for (int b = 1; b < bins; ++b)
    for (int c = 1; c < channels; ++c) f.push_back({b, c, testsupport::random_complex(rng)});
  return f;
}

WeightVector random_weights(std::mt19937_64& rng, int d) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> w(d);
  double s = 0.0;
  for (auto& v : w) s += (v = u(rng));
  for (auto& v : w) v /= s;
  return WeightVector(w);
}

}  // namespace

TEST_CASE("stft backends agree") {
  AudioBuffer a;
  a.samples = SignalMatrix::Random(6, 20000);
  const Spectrogram s = stft(a, {}, Backend::serial);
  const Spectrogram p = stft(a, {}, Backend::openmp);
  CHECK(s.data() == p.data());
}

TEST_CASE("DP-RTF bank backends agree") {
  const auto geom = testsupport::square_array(0.05);
  SceneConfig sc = testsupport::static_scene(geom, 50.0, 1.0, SourceSignal::speech_like);
  sc.snr_db = 10.0;
  const RenderedScene scene = render(sc);
  const Spectrogram s = stft(scene.audio, {});
  const FrameLabels labels = classify_frames(s, {}, 16000);
  PipelineConfig pc;
  const auto bins = localization_bins(pc, geom);
  DpRtfBank serial(4, s.bins(), bins, pc.ctf), parallel(4, s.bins(), bins, pc.ctf);
  std::vector<Complex> frame(4 * s.bins());
  std::vector<std::uint8_t> lab(s.bins());
  long total = 0;
  for (long t = 0; t < s.frames(); ++t) {
    for (int c = 0; c < 4; ++c)
      for (int f = 0; f < s.bins(); ++f) frame[c * s.bins() + f] = s.at(c, t, f);
    for (int f = 0; f < s.bins(); ++f) lab[f] = labels.speech(t, f) ? 1 : 0;
    const FeatureFrame a = serial.process_frame(frame, lab, Backend::serial);
    const FeatureFrame b = parallel.process_frame(frame, lab, Backend::openmp);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].bin == b[k].bin);
      CHECK(a[k].channel == b[k].channel);
      CHECK(a[k].value == b[k].value);
    }
    total += static_cast<long>(a.size());
  }
  CHECK(total > 0);
}

TEST_CASE("responsibility and gradient backends agree") {
  std::mt19937_64 rng(8);
  const auto geom = testsupport::square_array(0.05);
  const CandidateGrid grid = precompute_means(geom, default_azimuths(72), 129, 256, 16000);
  LocalizerConfig cfg;
  for (int trial = 0; trial < 5; ++trial) {
    const FeatureFrame f = random_features(rng, 60, 4);
    const WeightVector w = random_weights(rng, 72);
    const auto rs = cgmm_responsibilities(f, grid, w, cfg.variance, Backend::serial);
    const auto rp = cgmm_responsibilities(f, grid, w, cfg.variance, Backend::openmp);
    CHECK((rs.rho.array() == rp.rho.array()).all());
    CHECK(objective_gradient(f, grid, w, cfg, Backend::serial) ==
          objective_gradient(f, grid, w, cfg, Backend::openmp));
  }
}

TEST_CASE("full run backends agree on a two-speaker scene") {
  SceneConfig sc;
  sc.geometry = testsupport::square_array(0.1);
  sc.duration_s = 1.5;
  sc.snr_db = 10.0;
  sc.reverb.enabled = true;
  SourceSpec a, b;
  a.id = 1;
  a.trajectory = {{0.0, 60.0}, {1.5, 30.0}};
  b.id = 2;
  b.trajectory = {{0.0, -90.0}};
  sc.sources = {a, b};
  const RenderedScene rs = render(sc, Backend::serial);
  const RenderedScene rp = render(sc, Backend::openmp);
  REQUIRE((rs.audio.samples.array() == rp.audio.samples.array()).all());

  PipelineConfig cfg;
  cfg.backend = Backend::serial;
  const RunResult s = run(rs.audio, cfg, sc.geometry);
  cfg.backend = Backend::openmp;
  const RunResult p = run(rs.audio, cfg, sc.geometry);
  CHECK(s.heatmap == p.heatmap);
  REQUIRE(s.tracks.size() == p.tracks.size());
  for (std::size_t k = 0; k < s.tracks.size(); ++k) {
    CHECK(s.tracks[k].track.id == p.tracks[k].track.id);
    CHECK(s.tracks[k].track.azimuth_deg == p.tracks[k].track.azimuth_deg);
  }
}
