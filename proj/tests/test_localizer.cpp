#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>
#include <sstream>

#include "doatrack/localizer.hpp"
#include "support.hpp"

using namespace doatrack;

namespace {

// Random instance: grid of D candidates over a 3-mic array, K features.
struct Instance {
  CandidateGrid grid;
  FeatureFrame features;
  WeightVector w;
};

Instance random_instance(std::mt19937_64& rng, int d_count, int k_count, int bins = 12) {
  ArrayGeometry geom;
  geom.positions = {{0, 0, 0}, {0.04, 0.01, 0}, {-0.01, 0.05, 0}};
  std::vector<double> az(d_count);
  for (int d = 0; d < d_count; ++d) az[d] = -180.0 + 360.0 * (d + 1) / d_count;
  Instance in;
  in.grid = precompute_means(geom, az, bins, 256, 16000);
  std::uniform_int_distribution<int> bin(1, bins - 1), ch(1, 2);
  std::normal_distribution<double> n(0.0, 0.5);
  for (int k = 0; k < k_count; ++k) {
    const int f = bin(rng), i = ch(rng);
    std::uniform_int_distribution<int> pick(0, d_count - 1);
    in.features.push_back({f, i, in.grid.mean(pick(rng), f, i) + Complex(n(rng), n(rng))});
  }
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<double> w(d_count);
  for (auto& v : w) v = u(rng);
  const double s = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= s;
  in.w = WeightVector(w);
  return in;
}

double density(Complex c, Complex m, double s2) { return std::exp(-std::norm(c - m) / s2) / (kPi * s2); }

}  // namespace

TEST_CASE("grid azimuths") {
  const auto az = default_azimuths(72);
  CHECK(az.size() == 72);
  CHECK(az.front() == -175.0);
  CHECK(az.back() == 180.0);
  for (std::size_t d = 1; d < az.size(); ++d) CHECK(az[d] - az[d - 1] == doctest::Approx(5.0));
  CHECK(default_azimuths(4) == std::vector<double>{-90.0, 0.0, 90.0, 180.0});
}

TEST_CASE("broadside direction has zero delay and mean g") {
  const auto geom = testsupport::pair_array(0.1);
  const CandidateGrid grid = precompute_means(geom, {90.0}, 129, 256, 16000, 2.0);
  for (int f = 0; f < 129; ++f) {
    CHECK(std::abs(grid.mean(0, f, 1) - Complex(2.0, 0.0)) < 1e-12);
  }
}

TEST_CASE("endfire mean phase at 1 kHz") {
  // Mic 2 at +0.1 m on x: a source at 0 deg reaches it first.
  const auto geom = testsupport::pair_array(0.1);
  CHECK(relative_delay(geom, 1, 0, 0.0) == doctest::Approx(-0.1 / 343.0).epsilon(1e-12));
  // Reference at the far end gives the textbook positive delay 0.1 / 343 s.
  ArrayGeometry flipped;
  flipped.positions = {{0.1, 0, 0}, {0, 0, 0}};
  const double tau = 0.1 / 343.0;
  CHECK(relative_delay(flipped, 1, 0, 0.0) == doctest::Approx(tau).epsilon(1e-12));
  const CandidateGrid grid = precompute_means(flipped, {0.0}, 129, 256, 16000);
  const int f = 16;  // 1000 Hz
  CHECK(std::arg(grid.mean(0, f, 1)) == doctest::Approx(-1.8318).epsilon(1e-4));
  CHECK(std::arg(grid.mean(0, f, 1)) == doctest::Approx(-kTwoPi * 1000.0 * tau).epsilon(1e-12));
}

TEST_CASE("opposite directions give conjugate means") {
  const auto geom = testsupport::pair_array(0.07);
  const CandidateGrid grid = precompute_means(geom, {-150.0, 30.0}, 129, 256, 16000);
  for (int f = 0; f < 129; ++f) CHECK(std::abs(grid.mean(0, f, 1) - std::conj(grid.mean(1, f, 1))) < 1e-12);
}

TEST_CASE("candidate grid text round trip is lossless") {
  const auto geom = testsupport::square_array(0.025);
  const CandidateGrid grid = precompute_means(geom, default_azimuths(72), 129, 256, 16000, 0.7);
  std::stringstream ss;
  grid.save(ss);
  CHECK(CandidateGrid::load(ss) == grid);
  std::stringstream bad("not-a-grid 1");
  CHECK_THROWS_AS(CandidateGrid::load(bad), Error);
}

TEST_CASE("responsibilities: single candidate and symmetric pair") {
  std::mt19937_64 rng(1);
  Instance in = random_instance(rng, 1, 5);
  const auto r1 = cgmm_responsibilities(in.features, in.grid, WeightVector::uniform(1), 0.5);
  for (Eigen::Index k = 0; k < r1.rho.rows(); ++k) CHECK(r1.rho(k, 0) == 1.0);

  CandidateGrid two({0.0, 90.0}, 3, 2);
  two.mean(0, 1, 1) = Complex(1.0, 0.0);
  two.mean(1, 1, 1) = Complex(-1.0, 0.0);
  const FeatureFrame mid = {{1, 1, Complex(0.0, 0.3)}};
  const auto r2 = cgmm_responsibilities(mid, two, WeightVector::uniform(2), 0.5);
  CHECK(r2.rho(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(r2.rho(0, 1) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("responsibilities match the brute-force mixture ratio") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Instance in = random_instance(rng, 4, 3);
    const double s2 = 0.4;
    const auto r = cgmm_responsibilities(in.features, in.grid, in.w, s2);
    for (int k = 0; k < 3; ++k) {
      const Feature& f = in.features[k];
      double denom = 0.0;
      for (int d = 0; d < 4; ++d) denom += in.w[d] * density(f.value, in.grid.mean(d, f.bin, f.channel), s2);
      double row = 0.0;
      for (int d = 0; d < 4; ++d) {
        const double expected = in.w[d] * density(f.value, in.grid.mean(d, f.bin, f.channel), s2) / denom;
        CHECK(std::abs(r.rho(k, d) - expected) <= 1e-12 * expected);
        row += r.rho(k, d);
      }
      CHECK(std::abs(row - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("gradient agrees with central finite differences") {
  std::mt19937_64 rng(3);
  LocalizerConfig cfg;
  cfg.variance = 0.5;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Instance in = random_instance(rng, 8, 6);
    const auto g = objective_gradient(in.features, in.grid, in.w, cfg, Backend::serial);
    for (int d = 0; d < 8; ++d) {
      std::vector<double> plus = in.w.values(), minus = in.w.values();
      const double h = 1e-6;
      plus[d] += h;
      minus[d] -= h;
      const double fd = (objective_value(in.features, in.grid, plus, cfg) -
                         objective_value(in.features, in.grid, minus, cfg)) /
                        (2.0 * h);
      worst = std::max(worst, std::abs(fd - g[d]) / std::max(std::abs(g[d]), 1e-3));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("likelihood gradient is most negative at the feature's candidate") {
  const auto geom = testsupport::square_array(0.05);
  const CandidateGrid grid = precompute_means(geom, default_azimuths(72), 129, 256, 16000);
  LocalizerConfig cfg;
  cfg.entropy_weight = 0.0;
  cfg.variance = 0.05;
  const int target = 20;
  FeatureFrame feats;
  for (int i = 1; i < 4; ++i) feats.push_back({10, i, grid.mean(target, 10, i)});
  const auto g = objective_gradient(feats, grid, WeightVector::uniform(72), cfg);
  CHECK(std::min_element(g.begin(), g.end()) - g.begin() == target);
}

TEST_CASE("entropy-only gradient at uniform weights") {
  const CandidateGrid grid({-90.0, 0.0, 90.0, 180.0}, 3, 2);
  LocalizerConfig cfg;
  const auto g = objective_gradient({}, grid, WeightVector::uniform(4), cfg);
  for (double v : g) CHECK(v == doctest::Approx(-cfg.entropy_weight * (std::log(0.25) + 1.0)));
  for (double v : g) CHECK(v == g[0]);
}

TEST_CASE("eg update closed forms") {
  const WeightVector u = WeightVector::uniform(5);
  const std::vector<double> zero(5, 0.0), constant(5, 3.25);
  CHECK(eg_update(u, zero, 0.07).values() == u.values());
  CHECK(eg_update(u, constant, 0.07).values() == u.values());
  const std::vector<double> spike = {-1.0, 0.0, 0.0, 0.0, 0.0};
  const double eta = 0.07;
  const auto w = eg_update(u, spike, eta);
  CHECK(w[0] == doctest::Approx(std::exp(eta) / (std::exp(eta) + 4.0)).epsilon(1e-14));
  CHECK(w[0] > u[0]);
  for (int d = 1; d < 5; ++d) {
    CHECK(w[d] == w[1]);
    CHECK(w[d] < u[d]);
  }
}

TEST_CASE("eg update stays on the simplex and ignores gradient shifts") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 5.0);
  std::uniform_int_distribution<int> size(2, 80);
  std::uniform_real_distribution<double> u(1e-6, 1.0), eta(0.01, 1.0);
  double worst_sum = 0.0, worst_shift = 0.0;
  bool positive = true;
  for (int trial = 0; trial < 10000; ++trial) {
    const int d = size(rng);
    std::vector<double> w(d), g(d), shifted(d);
    for (auto& v : w) v = u(rng);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (auto& v : w) v /= s;
    const double c = n(rng);
    for (int k = 0; k < d; ++k) {
      g[k] = n(rng);
      shifted[k] = g[k] + c;
    }
    const double e = eta(rng);
    const auto a = eg_update(WeightVector(w), g, e);
    const auto b = eg_update(WeightVector(w), shifted, e);
    worst_sum = std::max(worst_sum, std::abs(std::accumulate(a.values().begin(), a.values().end(), 0.0) - 1.0));
    for (int k = 0; k < d; ++k) {
      positive = positive && a[k] > 0.0;
      worst_shift = std::max(worst_shift, std::abs(a[k] - b[k]) / a[k]);
    }
  }
  CHECK(worst_sum <= 1e-12);
  CHECK(positive);
  CHECK(worst_shift <= 1e-12);
}

TEST_CASE("peak picking") {
  const auto az = default_azimuths(72);
  CHECK(peak_pick(WeightVector::uniform(72), az, 1.0 / 72 + 1e-9, 15.0).empty());

  std::vector<double> w(72, 0.001);
  w[10] = 0.5;
  auto peaks = peak_pick(WeightVector(w), az, 0.1, 15.0);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].index == 10);
  CHECK(peaks[0].azimuth_deg == az[10]);

  w[12] = 0.3;  // 10 deg away from the larger spike
  peaks = peak_pick(WeightVector(w), az, 0.1, 15.0);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].index == 10);

  w[40] = 0.2;
  peaks = peak_pick(WeightVector(w), az, 0.1, 15.0);
  REQUIRE(peaks.size() == 2);
  CHECK(peaks[1].index == 40);

  // Wrap-around neighbours: index 0 and 71 are adjacent.
  std::vector<double> edge(72, 0.001);
  edge[71] = 0.4;
  edge[0] = 0.3;
  peaks = peak_pick(WeightVector(edge), az, 0.1, 15.0);
  REQUIRE(peaks.size() == 1);
  CHECK(peaks[0].index == 71);
}

TEST_CASE("weight floor keeps the simplex") {
  WeightVector w(std::vector<double>{0.0, 0.5, 0.5});
  w.apply_floor(1e-12);
  CHECK(w[0] > 0.0);
  CHECK(w[0] + w[1] + w[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("online localizer converges on a static grid-point source") {
  // Noiseless features at the true candidate for every bin and channel.
  const auto geom = testsupport::square_array(0.025);
  const auto az = default_azimuths(72);
  const CandidateGrid grid = precompute_means(geom, az, 129, 256, 16000);
  OnlineLocalizer loc(grid, LocalizerConfig{});
  const int target = 43;
  FeatureFrame feats;
  for (int f = 2; f < 80; ++f)
    for (int i = 1; i < 4; ++i) feats.push_back({f, i, grid.mean(target, f, i)});
  for (int t = 0; t < 125; ++t) loc.update(feats);  // 1 s of frames
  const auto& w = loc.weights().values();
  CHECK(std::max_element(w.begin(), w.end()) - w.begin() == target);
  CHECK(std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) < 1e-12);
}

TEST_CASE("silent frames keep uniform weights uniform") {
  const CandidateGrid grid({-90.0, 0.0, 90.0, 180.0}, 3, 2);
  OnlineLocalizer loc(grid, LocalizerConfig{});
  for (int t = 0; t < 500; ++t) loc.update({});
  for (double v : loc.weights().values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("entropy term sharpens an uneven weight vector in silence") {
  CandidateGrid grid({-90.0, 0.0, 90.0, 180.0}, 3, 2);
  for (int d = 0; d < 4; ++d) grid.mean(d, 1, 1) = std::polar(1.0, d * 1.5);
  OnlineLocalizer loc(grid, LocalizerConfig{});
  const FeatureFrame feats = {{1, 1, grid.mean(2, 1, 1)}};
  for (int t = 0; t < 10; ++t) loc.update(feats);
  const double before = loc.weights()[2];
  for (int t = 0; t < 200; ++t) loc.update({});
  CHECK(loc.weights()[2] > before);
}

TEST_CASE("localizer config validation") {
  LocalizerConfig cfg;
  cfg.variance = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.gradient_clip = 0.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
