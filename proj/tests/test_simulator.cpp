#include <doctest.h>

#include <cmath>

#include "doatrack/simulator.hpp"
#include "support.hpp"

using namespace doatrack;
using testsupport::channel;
using testsupport::correlation_lag;

TEST_CASE("broadside source reaches both microphones together") {
  const SceneConfig sc = testsupport::static_scene(testsupport::pair_array(0.1), 90.0, 1.0,
                                                   SourceSignal::white_noise);
  const RenderedScene r = render(sc);
  const double lag = correlation_lag(channel(r.clean, 0), channel(r.clean, 1), 10);
  CHECK(std::abs(lag) < 0.05);
}

TEST_CASE("endfire source gives the geometric lag") {
  // Spacing chosen for exactly 5 samples of delay at 16 kHz.
  const double spacing = 5.0 * 343.0 / 16000.0;
  const SceneConfig sc = testsupport::static_scene(testsupport::pair_array(spacing), 0.0, 1.0,
                                                   SourceSignal::white_noise);
  const RenderedScene r = render(sc);
  // The second microphone sits towards the source and hears it first.
  const double lag = correlation_lag(channel(r.clean, 0), channel(r.clean, 1), 10);
  CHECK(std::abs(lag + 5.0) < 0.1);
}

TEST_CASE("fractional delay reproduces a band-limited tone") {
  std::vector<double> x(400);
  for (std::size_t n = 0; n < x.size(); ++n) x[n] = std::sin(0.3 * n);
  for (double pos : {150.25, 200.5, 233.9}) CHECK(fractional_sample(x, pos) == doctest::Approx(std::sin(0.3 * pos)).epsilon(1e-2));
  CHECK(fractional_sample(x, 100.0) == x[100]);
  CHECK(fractional_sample(x, -50.0) == 0.0);
}

TEST_CASE("rendering is deterministic in the seed") {
  SceneConfig sc = testsupport::static_scene(testsupport::square_array(0.05), 30.0, 0.5,
                                             SourceSignal::speech_like);
  sc.snr_db = 10.0;
  sc.reverb.enabled = true;
  const RenderedScene a = render(sc);
  const RenderedScene b = render(sc);
  CHECK((a.audio.samples.array() == b.audio.samples.array()).all());
  sc.seed = 4;
  const RenderedScene c = render(sc);
  CHECK_FALSE((a.audio.samples.array() == c.audio.samples.array()).all());
}

TEST_CASE("serial and parallel rendering agree bitwise") {
  SceneConfig sc = testsupport::static_scene(testsupport::square_array(0.05), -70.0, 0.5,
                                             SourceSignal::white_noise);
  sc.snr_db = 5.0;
  sc.reverb.enabled = true;
  const RenderedScene a = render(sc, Backend::serial);
  const RenderedScene b = render(sc, Backend::openmp);
  CHECK((a.audio.samples.array() == b.audio.samples.array()).all());
}

TEST_CASE("additive noise meets the requested SNR") {
  for (double snr : {0.0, 10.0, 20.0}) {
    SceneConfig sc = testsupport::static_scene(testsupport::square_array(0.05), 0.0, 2.0,
                                               SourceSignal::speech_like);
    sc.snr_db = snr;
    const RenderedScene r = render(sc);
    const double signal = r.clean.samples.squaredNorm();
    const double noise = (r.audio.samples - r.clean.samples).squaredNorm();
    CHECK(std::abs(10.0 * std::log10(signal / noise) - snr) <= 0.5);
  }
}

TEST_CASE("reverberation adds a tail at the requested direct-to-reverberant ratio") {
  SceneConfig sc = testsupport::static_scene(testsupport::pair_array(0.1), 90.0, 2.0,
                                             SourceSignal::white_noise);
  const RenderedScene dry = render(sc);
  sc.reverb = {true, 0.25, 10.0};
  const RenderedScene wet = render(sc);
  const double direct = dry.clean.samples.squaredNorm();
  const double tail = (wet.clean.samples - dry.clean.samples).squaredNorm();
  CHECK(std::abs(10.0 * std::log10(direct / tail) - 10.0) < 1.0);
}

TEST_CASE("trajectories and activity") {
  SourceSpec s;
  s.trajectory = {{0.0, 170.0}, {1.0, -170.0}, {2.0, -90.0}};
  CHECK(s.azimuth_at(-1.0) == 170.0);
  CHECK(s.azimuth_at(0.5) == doctest::Approx(180.0));  // short way across the seam
  CHECK(s.azimuth_at(1.5) == doctest::Approx(-130.0));
  CHECK(s.azimuth_at(9.0) == -90.0);
  CHECK(s.active_at(0.3));
  s.activity = {{0.0, 1.0}, {1.5, 2.0}};
  CHECK(s.active_at(0.0));
  CHECK_FALSE(s.active_at(1.0));
  CHECK(s.active_at(1.7));
  CHECK_FALSE(s.active_at(2.0));
}

TEST_CASE("inactive intervals are silent in the clean mixture") {
  SceneConfig sc = testsupport::static_scene(testsupport::pair_array(0.1), 45.0, 1.0,
                                             SourceSignal::white_noise);
  sc.sources[0].activity = {{0.0, 0.4}};
  const RenderedScene r = render(sc);
  // Well past the end of activity and the interpolation support.
  CHECK(r.clean.samples.middleCols(8000, 8000).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.clean.samples.middleCols(0, 6000).cwiseAbs().maxCoeff() > 0.1);
}

TEST_CASE("ground truth follows the frame clock") {
  SceneConfig sc = testsupport::static_scene(testsupport::pair_array(0.1), 20.0, 1.0,
                                             SourceSignal::white_noise);
  sc.sources[0].trajectory = {{0.0, 0.0}, {1.0, 100.0}};
  const RenderedScene r = render(sc);
  CHECK(static_cast<long>(r.truth.size()) == frame_count(16000, sc.frame_clock));
  CHECK(r.truth[0].time_s == doctest::Approx(128.0 / 16000.0));
  CHECK(r.truth[10].speakers[0].azimuth_deg == doctest::Approx(100.0 * r.truth[10].time_s));
}

TEST_CASE("speech-like excitation has unit power and pauses") {
  const auto s = speech_like_signal(16000 * 4, 16000, 9);
  double power = 0.0;
  long zeros = 0;
  for (double v : s) {
    power += v * v;
    zeros += v == 0.0 ? 1 : 0;
  }
  CHECK(power / s.size() == doctest::Approx(1.0));
  CHECK(zeros > 16000 * 0.04);
}

TEST_CASE("invalid scenes are rejected") {
  SceneConfig sc = testsupport::static_scene(testsupport::pair_array(0.1), 0.0, 1.0,
                                             SourceSignal::white_noise);
  sc.duration_s = 0.0;
  CHECK_THROWS_AS(render(sc), Error);
  sc.duration_s = 1.0;
  sc.sources[0].trajectory.clear();
  CHECK_THROWS_AS(render(sc), Error);
  sc.sources[0].trajectory = {{0.0, 0.0}};
  sc.sources[0].activity = {{1.0, 0.5}};
  CHECK_THROWS_AS(render(sc), Error);
}
