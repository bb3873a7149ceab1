// Serial reference vs OpenMP for each parallel kernel. The backend is the
// benchmark argument: 0 = serial, 1 = openmp.

#include <benchmark/benchmark.h>

#include <random>

#include "doatrack/frontend.hpp"
#include "doatrack/localizer.hpp"
#include "doatrack/pipeline.hpp"
#include "doatrack/simulator.hpp"

using namespace doatrack;

namespace {

Backend backend_of(const benchmark::State& state) {
  return state.range(0) == 0 ? Backend::serial : Backend::openmp;
}

void label(benchmark::State& state) { state.SetLabel(state.range(0) == 0 ? "serial" : "openmp"); }

ArrayGeometry square(double half_side) {
  ArrayGeometry g;
  g.positions = {{half_side, half_side, 0.0},
                 {-half_side, half_side, 0.0},
                 {-half_side, -half_side, 0.0},
                 {half_side, -half_side, 0.0}};
  return g;
}

SceneConfig two_speaker_scene(double duration_s) {
  SceneConfig sc;
  sc.geometry = square(0.1);
  sc.duration_s = duration_s;
  sc.snr_db = 10.0;
  sc.reverb.enabled = true;
  SourceSpec a, b;
  a.id = 1;
  a.trajectory = {{0.0, 60.0}, {duration_s, 0.0}};
  b.id = 2;
  b.trajectory = {{0.0, -90.0}};
  sc.sources = {a, b};
  return sc;
}

const RenderedScene& shared_scene() {
  static const RenderedScene scene = render(two_speaker_scene(3.0));
  return scene;
}

void BM_Stft(benchmark::State& state) {
  const AudioBuffer& audio = shared_scene().audio;
  for (auto _ : state) benchmark::DoNotOptimize(stft(audio, {}, backend_of(state)));
  state.SetItemsProcessed(state.iterations() * audio.length());
  label(state);
}

void BM_DpRtfBank(benchmark::State& state) {
  const RenderedScene& scene = shared_scene();
  const Spectrogram s = stft(scene.audio, {});
  const FrameLabels labels = classify_frames(s, {}, scene.audio.sample_rate);
  PipelineConfig pc;
  const auto bins = localization_bins(pc, square(0.1));
  const int ch = s.channels();
  std::vector<Complex> frame(static_cast<std::size_t>(ch) * s.bins());
  std::vector<std::uint8_t> lab(s.bins());
  for (auto _ : state) {
    DpRtfBank bank(ch, s.bins(), bins, pc.ctf);
    for (long t = 0; t < s.frames(); ++t) {
      for (int c = 0; c < ch; ++c)
        for (int f = 0; f < s.bins(); ++f) frame[c * s.bins() + f] = s.at(c, t, f);
      for (int f = 0; f < s.bins(); ++f) lab[f] = labels.speech(t, f) ? 1 : 0;
      benchmark::DoNotOptimize(bank.process_frame(frame, lab, backend_of(state)));
    }
  }
  state.SetItemsProcessed(state.iterations() * s.frames());
  label(state);
}

void BM_Gradient(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  const CandidateGrid grid = precompute_means(square(0.1), default_azimuths(72), 129, 256, 16000);
  FeatureFrame f;
  for (int b = 2; b < 60; ++b)
    for (int c = 1; c < 4; ++c) f.push_back({b, c, {n(rng), n(rng)}});
  const WeightVector w = WeightVector::uniform(72);
  const LocalizerConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(objective_gradient(f, grid, w, cfg, backend_of(state)));
  label(state);
}

void BM_Render(benchmark::State& state) {
  const SceneConfig sc = two_speaker_scene(2.0);
  for (auto _ : state) benchmark::DoNotOptimize(render(sc, backend_of(state)));
  label(state);
}

void BM_Run(benchmark::State& state) {
  const RenderedScene& scene = shared_scene();
  PipelineConfig cfg;
  cfg.backend = backend_of(state);
  for (auto _ : state) benchmark::DoNotOptimize(run(scene.audio, cfg, square(0.1)));
  state.SetItemsProcessed(state.iterations() * scene.audio.length());
  label(state);
}

}  // namespace

BENCHMARK(BM_Stft)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_DpRtfBank)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gradient)->Arg(0)->Arg(1)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_Render)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Run)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
