#include <doctest.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include <sys/wait.h>
#include <unistd.h>

#include "doatrack/fft.hpp"
#include "doatrack/io.hpp"
#include "support.hpp"

using namespace doatrack;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("doatrack_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void put_u32(std::ostream& os, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) os.put(static_cast<char>((v >> (8 * k)) & 0xff));
}
void put_u16(std::ostream& os, std::uint16_t v) {
  os.put(static_cast<char>(v & 0xff));
  os.put(static_cast<char>(v >> 8));
}

// Minimal PCM16 writer independent of the library.
void write_pcm16(const fs::path& p, const std::vector<std::int16_t>& interleaved, int channels,
                 int rate) {
  std::ofstream os(p, std::ios::binary);
  const auto bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + bytes);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, static_cast<std::uint16_t>(channels));
  put_u32(os, static_cast<std::uint32_t>(rate));
  put_u32(os, static_cast<std::uint32_t>(rate * channels * 2));
  put_u16(os, static_cast<std::uint16_t>(channels * 2));
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, bytes);
  for (auto v : interleaved) put_u16(os, static_cast<std::uint16_t>(v));
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(DOATRACK_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("int16 WAV samples are normalized by 32768") {
  TempDir dir;
  const std::vector<std::int16_t> data = {0, 1, -1, 32767, -32768, 12345, -2, 7};
  write_pcm16(dir.path / "a.wav", data, 2, 16000);
  const AudioBuffer a = read_wav(dir.path / "a.wav");
  REQUIRE(a.channels() == 2);
  REQUIRE(a.length() == 4);
  for (std::size_t k = 0; k < data.size(); ++k)
    CHECK(a.samples(static_cast<Eigen::Index>(k % 2), static_cast<Eigen::Index>(k / 2)) == data[k] / 32768.0);
}

TEST_CASE("48 kHz tone resamples to 16 kHz at the same frequency") {
  TempDir dir;
  const int rate = 48000;
  std::vector<std::int16_t> data(rate * 2);
  for (std::size_t n = 0; n < data.size(); ++n)
    data[n] = static_cast<std::int16_t>(std::lround(16000.0 * std::sin(kTwoPi * 1000.0 * n / rate)));
  write_pcm16(dir.path / "t.wav", data, 1, rate);
  const AudioBuffer a = read_wav(dir.path / "t.wav");
  CHECK(a.sample_rate == 16000);
  CHECK(std::abs(a.length() - 32000) <= 1);

  // Zero-padded FFT of the middle second, peak refined by a parabola.
  const int n = 16000, pad = 1 << 20;
  std::vector<double> x(pad, 0.0);
  for (int k = 0; k < n; ++k) {
    const double w = 0.5 - 0.5 * std::cos(kTwoPi * k / (n - 1));
    x[k] = w * a.samples(0, 8000 + k);
  }
  const RealFft fft(pad);
  std::vector<Complex> spec(fft.bins());
  fft.forward(x, spec);
  std::size_t best = 1;
  for (std::size_t k = 1; k + 1 < spec.size(); ++k)
    if (std::abs(spec[k]) > std::abs(spec[best])) best = k;
  const double l = std::abs(spec[best - 1]), m = std::abs(spec[best]), r = std::abs(spec[best + 1]);
  const double peak = best + 0.5 * (l - r) / (l - 2.0 * m + r);
  CHECK(std::abs(peak * 16000.0 / pad - 1000.0) < 0.1);
}

TEST_CASE("float WAV round trip and truncated files") {
  TempDir dir;
  AudioBuffer a;
  a.samples = SignalMatrix::Random(3, 500) * 0.9;
  write_wav(dir.path / "f.wav", a, WavFormat::float32);
  const AudioBuffer b = read_wav(dir.path / "f.wav");
  CHECK((b.samples - a.samples).cwiseAbs().maxCoeff() < 1e-7);

  std::ifstream is(dir.path / "f.wav", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), {});
  std::ofstream(dir.path / "cut.wav", std::ios::binary).write(bytes.data(), 100);
  CHECK_THROWS_AS(read_wav(dir.path / "cut.wav"), Error);
  std::ofstream(dir.path / "junk.wav") << "not audio at all";
  CHECK_THROWS_AS(read_wav(dir.path / "junk.wav"), Error);
  CHECK_THROWS_AS(read_wav(dir.path / "missing.wav"), Error);
}

TEST_CASE("geometry files") {
  std::istringstream two("# pair\nspeed_of_sound 340\n0 0 0\n0.1 0 0\n");
  const ArrayGeometry g = parse_geometry(two);
  CHECK(g.channels() == 2);
  CHECK(g.speed_of_sound == 340.0);
  std::istringstream dup("0 0 0\n0.1 0 0\n0 0 0\n");
  CHECK_THROWS_AS(parse_geometry(dup), Error);
  std::istringstream one("0 0 0\n");
  CHECK_THROWS_AS(parse_geometry(one), Error);
  std::istringstream bad("0 0\n1 1\n");
  CHECK_THROWS_AS(parse_geometry(bad), Error);

  const ArrayGeometry shipped = read_geometry(DOATRACK_CONFIG_DIR "/square4.txt");
  CHECK(shipped.channels() == 4);
  CHECK(shipped.max_spacing() == doctest::Approx(0.05 * std::sqrt(2.0)));

  std::stringstream ss;
  write_geometry(ss, shipped);
  const ArrayGeometry back = parse_geometry(ss);
  for (int i = 0; i < 4; ++i) CHECK(back.positions[i] == shipped.positions[i]);
}

TEST_CASE("track files round trip exactly") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-180.0, 180.0);
  TrackFile f;
  f.clock = {20, 128, 256, 16000};
  f.fingerprint = 0xdeadbeefcafef00dULL;
  for (long t = 0; t < 20; ++t)
    for (int id = 1; id <= 2; ++id)
      f.records.push_back({t, f.clock.time(t), {id, u(rng), u(rng) * 1e-3, (t + id) % 3 != 0, u(rng) * u(rng)}});
  std::stringstream ss;
  write_tracks(ss, f);
  const TrackFile g = read_tracks(ss);
  CHECK(g.fingerprint == f.fingerprint);
  CHECK(g.clock.frames == 20);
  REQUIRE(g.records.size() == f.records.size());
  for (std::size_t k = 0; k < f.records.size(); ++k) {
    CHECK(g.records[k].frame == f.records[k].frame);
    CHECK(g.records[k].time_s == f.records[k].time_s);
    CHECK(g.records[k].track.id == f.records[k].track.id);
    CHECK(g.records[k].track.azimuth_deg == f.records[k].track.azimuth_deg);
    CHECK(g.records[k].track.velocity == f.records[k].track.velocity);
    CHECK(g.records[k].track.active == f.records[k].track.active);
    CHECK(g.records[k].track.trace == f.records[k].track.trace);
  }
  const auto est = estimates_from_tracks(g);
  CHECK(est.size() == 20);
}

TEST_CASE("empty track set writes a header-only file") {
  TrackFile f;
  f.clock.frames = 5;
  std::stringstream ss;
  write_tracks(ss, f);
  std::string line;
  int data_lines = 0;
  bool columns = false;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!columns) {
      columns = true;
      continue;
    }
    ++data_lines;
  }
  CHECK(columns);
  CHECK(data_lines == 0);
  ss.clear();
  ss.seekg(0);
  CHECK(read_tracks(ss).records.empty());
}

TEST_CASE("peak files round trip") {
  PeakFile f;
  f.clock.frames = 3;
  f.peaks = {{{3, -160.0, 0.25}}, {}, {{10, -125.0, 0.5}, {40, 25.0, 0.125}}};
  std::stringstream ss;
  write_peaks(ss, f);
  const PeakFile g = read_peaks(ss);
  REQUIRE(g.peaks.size() == 3);
  CHECK(g.peaks[1].empty());
  CHECK(g.peaks[2][1].azimuth_deg == 25.0);
  CHECK(g.peaks[2][1].weight == 0.125);
}

TEST_CASE("truth tables round trip") {
  GroundTruth g(3);
  for (int t = 0; t < 3; ++t) {
    g[t].time_s = 0.008 * t;
    g[t].speakers = {{1, 10.5 + t, true}, {2, -33.25, t != 1}};
  }
  TempDir dir;
  {
    std::ofstream os(dir.path / "truth.csv");
    write_truth(os, g);
  }
  const GroundTruth back = read_truth(dir.path / "truth.csv");
  REQUIRE(back.size() == 3);
  CHECK(back[2].speakers[0].azimuth_deg == 12.5);
  CHECK_FALSE(back[1].speakers[1].active);
}

TEST_CASE("pipeline configuration round trip and validation") {
  PipelineConfig cfg;
  cfg.localizer.learning_rate = 0.0123456789;
  cfg.tracker.birth_log_threshold = -1.75;
  cfg.ctf.max_freq_hz = 3500.0;
  std::stringstream ss;
  write_pipeline_config(ss, cfg);
  const PipelineConfig back = parse_pipeline_config(ss);
  CHECK(back.fingerprint() == cfg.fingerprint());
  CHECK(back.localizer.learning_rate == cfg.localizer.learning_rate);

  std::istringstream unknown("[localizer]\nno_such_key = 1\n");
  CHECK_THROWS_AS(parse_pipeline_config(unknown), Error);
  std::istringstream bad_value("[localizer]\nlearning_rate = fast\n");
  CHECK_THROWS_AS(parse_pipeline_config(bad_value), Error);
  std::istringstream partial("[localizer]\nentropy_weight = 0.2\n");
  const PipelineConfig p = parse_pipeline_config(partial);
  CHECK(p.localizer.entropy_weight == 0.2);
  CHECK(p.localizer.learning_rate == PipelineConfig{}.localizer.learning_rate);

  CHECK(read_pipeline_config(DOATRACK_CONFIG_DIR "/default.ini").fingerprint() ==
        PipelineConfig{}.fingerprint());
}

TEST_CASE("results directory carries the fingerprint everywhere") {
  TempDir dir;
  const auto geom = testsupport::square_array(0.05);
  const RenderedScene scene =
      render(testsupport::static_scene(geom, 10.0, 0.5, SourceSignal::speech_like));
  PipelineConfig cfg;
  const RunResult r = run(scene.audio, cfg, geom);
  write_results(dir.path, r, cfg, true);
  std::ostringstream fp;
  fp << std::hex << std::setw(16) << std::setfill('0') << cfg.fingerprint();
  for (const char* name : {"heatmap.csv", "tracks.csv"}) {
    std::ifstream is(dir.path / name);
    REQUIRE(is);
    std::string text((std::istreambuf_iterator<char>(is)), {});
    CHECK(text.find(fp.str()) != std::string::npos);
  }
  std::ifstream hm(dir.path / "heatmap.csv");
  std::string line;
  long rows = 0;
  bool header = false;
  while (std::getline(hm, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      header = true;
      continue;
    }
    ++rows;
  }
  CHECK(rows == static_cast<long>(r.heatmap.size()));
  CHECK_THROWS_AS(write_results("/proc/definitely/not/writable", r, cfg, true), Error);
}

TEST_CASE("command-line exit codes") {
  TempDir dir;
  const std::string out = (dir.path / "sim").string();
  CHECK(run_cli("defaults") == 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("track /no/such.wav --geometry /no/such.txt -o " + out) != 0);

  // A short scene through simulate -> track -> evaluate.
  {
    std::ofstream scene(dir.path / "scene.ini");
    scene << "[scene]\nduration_s = 0.5\ngeometry = " DOATRACK_CONFIG_DIR "/square4.txt\n"
          << "[source1]\nsignal = white_noise\nazimuth_deg = 30\n";
  }
  REQUIRE(run_cli("simulate " + (dir.path / "scene.ini").string() + " -o " + out) == 0);
  CHECK(fs::exists(dir.path / "sim" / "audio.wav"));
  const std::string res = (dir.path / "res").string();
  REQUIRE(run_cli("track " + out + "/audio.wav --geometry " + out + "/geometry.txt -o " + res) == 0);
  CHECK(run_cli("evaluate --tracks " + res + "/tracks.csv --truth " + out + "/truth.csv -o " +
                (dir.path / "rep").string()) == 0);
  CHECK(fs::exists(dir.path / "rep" / "report.json"));
  CHECK(run_cli("evaluate --tracks " + res + "/heatmap.csv --truth " + out + "/truth.csv -o " +
                (dir.path / "rep2").string()) != 0);
}
