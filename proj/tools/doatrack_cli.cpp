// doatrack: command-line front end for simulation, localization, tracking
// and evaluation.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "doatrack/io.hpp"
#include "doatrack/pipeline.hpp"
#include "doatrack/simulator.hpp"

namespace fs = std::filesystem;
using namespace doatrack;

namespace {

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  long frames = -1;
  bool serial = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Pipeline configuration (INI)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--frames", c.frames, "Process at most N frames");
  cmd->add_flag("--serial", c.serial, "Use the serial reference kernels");
}

PipelineConfig load_config(const Common& c) {
  PipelineConfig cfg = c.config.empty() ? PipelineConfig{} : read_pipeline_config(c.config);
  if (c.serial) cfg.backend = Backend::serial;
  cfg.validate();
  return cfg;
}

int analyze(const std::string& wav, const std::string& geometry, const std::string& out,
            const std::string& truth, const Common& c, bool tracking) {
  RunManifest manifest;
  manifest.inputs = {wav, geometry};
  if (!truth.empty()) manifest.inputs.emplace_back(truth);
  manifest.config = c.config;
  manifest.output = out;
  manifest.mode = tracking ? Mode::track : Mode::localize;
  manifest.seed = c.seed;
  manifest.validate();

  const PipelineConfig cfg = load_config(c);
  const ArrayGeometry geom = read_geometry(geometry);
  const AudioBuffer audio = read_wav(wav, cfg.sample_rate);
  const RunResult result = run(audio, cfg, geom, c.frames);

  std::optional<EvalReport> report;
  if (!truth.empty()) {
    const GroundTruth aligned = align_truth(read_truth(truth), result.frame_times);
    report = evaluate(tracking ? track_estimates(result) : peak_estimates(result), aligned,
                      cfg.metric_gate_deg);
  }
  write_results(out, result, cfg, tracking, report ? &*report : nullptr);
  std::cout << result.heatmap.size() << " frames written to " << out << '\n';
  if (report) write_report_text(std::cout, *report);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online multi-speaker azimuth localization and tracking"};
  app.require_subcommand(1);

  Common common;
  std::string scene_path, wav, geometry, out, truth, tracks;

  auto* simulate = app.add_subcommand("simulate", "Render a synthetic scene with ground truth");
  simulate->add_option("scene", scene_path, "Scene description (INI)")->required();
  simulate->add_option("-o,--output", out, "Output directory")->required();
  std::optional<std::uint64_t> scene_seed;
  simulate->add_option("--seed", scene_seed, "Override the scene seed");

  auto* localize = app.add_subcommand("localize", "Frame-wise spatial spectrum and peaks");
  localize->add_option("wav", wav, "Multichannel WAV")->required();
  localize->add_option("--geometry", geometry, "Microphone geometry file")->required();
  localize->add_option("-o,--output", out, "Output directory")->required();
  localize->add_option("--truth", truth, "Ground truth table for an evaluation report");
  add_common(localize, common);

  auto* track = app.add_subcommand("track", "Localization followed by multi-speaker tracking");
  track->add_option("wav", wav, "Multichannel WAV")->required();
  track->add_option("--geometry", geometry, "Microphone geometry file")->required();
  track->add_option("-o,--output", out, "Output directory")->required();
  track->add_option("--truth", truth, "Ground truth table for an evaluation report");
  add_common(track, common);

  auto* eval = app.add_subcommand("evaluate", "Score a track or peak file against ground truth");
  eval->add_option("--tracks", tracks, "tracks.csv or peaks.csv")->required();
  eval->add_option("--truth", truth, "Ground truth table")->required();
  eval->add_option("-o,--output", out, "Report directory")->required();
  double gate = 15.0;
  eval->add_option("--gate", gate, "Matching gate in degrees");

  app.add_subcommand("defaults", "Print the default pipeline configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*simulate) {
      SceneConfig scene = read_scene_config(scene_path);
      if (scene_seed) scene.seed = *scene_seed;
      const RenderedScene r = render(scene);
      std::error_code ec;
      fs::create_directories(out, ec);
      if (ec) throw Error("cannot create " + out + ": " + ec.message());
      write_wav(fs::path(out) / "audio.wav", r.audio);
      write_wav(fs::path(out) / "clean.wav", r.clean);
      std::ofstream truth_os(fs::path(out) / "truth.csv");
      std::ofstream geom_os(fs::path(out) / "geometry.txt");
      if (!truth_os || !geom_os) throw Error("cannot write into " + out);
      write_truth(truth_os, r.truth);
      write_geometry(geom_os, scene.geometry);
      std::cout << r.audio.length() << " samples, " << r.truth.size() << " truth frames written to "
                << out << '\n';
      return 0;
    }
    if (*localize) return analyze(wav, geometry, out, truth, common, false);
    if (*track) return analyze(wav, geometry, out, truth, common, true);
    if (*eval) {
      const EstimateSequence est = read_estimates(tracks);
      const GroundTruth aligned = align_truth(read_truth(truth), est.times);
      const EvalReport report = evaluate(est.frames, aligned, gate);
      write_report(out, report, est.fingerprint);
      write_report_text(std::cout, report);
      return 0;
    }
    write_pipeline_config(std::cout, PipelineConfig{});
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "doatrack: " << e.what() << '\n';
    return 1;
  }
}
