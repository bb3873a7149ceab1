#include "doatrack/localizer.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "doatrack/parallel.hpp"

namespace doatrack {

double ArrayGeometry::max_spacing() const {
  double best = 0.0;
  for (std::size_t a = 0; a < positions.size(); ++a)
    for (std::size_t b = a + 1; b < positions.size(); ++b)
      best = std::max(best, (positions[a] - positions[b]).norm());
  return best;
}

double ArrayGeometry::aliasing_frequency() const {
  const double d = max_spacing();
  return d > 0.0 ? speed_of_sound / (2.0 * d) : std::numeric_limits<double>::infinity();
}

void ArrayGeometry::validate() const {
  if (positions.size() < 2) throw Error("geometry needs at least 2 microphones");
  if (!(speed_of_sound > 0.0)) throw Error("speed of sound must be positive");
  for (std::size_t a = 0; a < positions.size(); ++a) {
    if (!positions[a].allFinite()) throw Error("non-finite microphone coordinate");
    for (std::size_t b = a + 1; b < positions.size(); ++b)
      if ((positions[a] - positions[b]).norm() == 0.0)
        throw Error("duplicate microphone position (rows " + std::to_string(a + 1) + " and " +
                    std::to_string(b + 1) + ")");
  }
}

Eigen::Vector3d azimuth_direction(double azimuth_deg) {
  const double a = deg_to_rad(azimuth_deg);
  return {std::cos(a), std::sin(a), 0.0};
}

double relative_delay(const ArrayGeometry& geom, int channel, int reference, double azimuth_deg) {
  // A plane wave from direction u reaches position p at -p.u / c.
  const Eigen::Vector3d u = azimuth_direction(azimuth_deg);
  return -(geom.positions[channel] - geom.positions[reference]).dot(u) / geom.speed_of_sound;
}

std::vector<double> default_azimuths(int count) {
  if (count < 1) throw Error("grid needs at least one candidate");
  std::vector<double> az(count);
  const double step = 360.0 / count;
  for (int d = 0; d < count; ++d) az[d] = 180.0 - (count - 1 - d) * step;
  return az;
}

// ---------------------------------------------------------------------------

CandidateGrid::CandidateGrid(std::vector<double> azimuths, int bins, int channels)
    : azimuths_(std::move(azimuths)),
      bins_(bins),
      channels_(channels),
      means_(azimuths_.size() * static_cast<std::size_t>(bins) * (channels - 1)) {
  if (channels < 2) throw Error("grid needs at least 2 channels");
  for (std::size_t d = 0; d < azimuths_.size(); ++d) {
    if (!(azimuths_[d] > -180.0 && azimuths_[d] <= 180.0))
      throw Error("grid azimuths must lie in (-180, 180]");
    if (d > 0 && !(azimuths_[d] > azimuths_[d - 1]))
      throw Error("grid azimuths must be strictly increasing");
  }
}

void CandidateGrid::save(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "doatrack-grid 1\n";
  os << size() << ' ' << bins_ << ' ' << channels_ << '\n';
  for (int d = 0; d < size(); ++d) os << (d ? " " : "") << azimuths_[d];
  os << '\n';
  for (int d = 0; d < size(); ++d) {
    for (int f = 0; f < bins_; ++f) {
      for (int i = 1; i < channels_; ++i) {
        const Complex m = mean(d, f, i);
        os << (i > 1 ? " " : "") << m.real() << ' ' << m.imag();
      }
      os << '\n';
    }
  }
  os.precision(old);
}

CandidateGrid CandidateGrid::load(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "doatrack-grid") throw Error("not a candidate grid");
  if (version != 1) throw Error("unsupported grid version " + std::to_string(version));
  int d_count = 0, bins = 0, channels = 0;
  if (!(is >> d_count >> bins >> channels) || d_count < 1 || bins < 1 || channels < 2)
    throw Error("malformed grid header");
  std::vector<double> az(d_count);
  for (auto& a : az)
    if (!(is >> a)) throw Error("truncated grid azimuths");
  CandidateGrid grid(std::move(az), bins, channels);
  for (int d = 0; d < d_count; ++d)
    for (int f = 0; f < bins; ++f)
      for (int i = 1; i < channels; ++i) {
        double re = 0.0, im = 0.0;
        if (!(is >> re >> im)) throw Error("truncated grid means");
        grid.mean(d, f, i) = {re, im};
      }
  return grid;
}

CandidateGrid precompute_means(const ArrayGeometry& geom, std::vector<double> azimuths, int bins,
                               int fft_length, int sample_rate, double magnitude, int reference) {
  if (geom.channels() < 2) throw Error("geometry needs at least 2 microphones");
  if (reference < 0 || reference >= geom.channels()) throw Error("reference channel out of range");
  CandidateGrid grid(std::move(azimuths), bins, geom.channels());

  std::vector<int> others;
  for (int c = 0; c < geom.channels(); ++c)
    if (c != reference) others.push_back(c);
  for (int c : others) {
    if ((geom.positions[c] - geom.positions[reference]).norm() == 0.0)
      std::cerr << "warning: microphone " << c << " is colocated with the reference; its delay is "
                << "zero for every direction\n";
  }

  for (int d = 0; d < grid.size(); ++d) {
    for (int k = 0; k < static_cast<int>(others.size()); ++k) {
      const double tau = relative_delay(geom, others[k], reference, grid.azimuths()[d]);
      for (int f = 0; f < bins; ++f) {
        const double hz = static_cast<double>(f) * sample_rate / fft_length;
        grid.mean(d, f, k + 1) = std::polar(magnitude, -kTwoPi * hz * tau);
      }
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------

WeightVector WeightVector::uniform(int size) {
  return WeightVector(std::vector<double>(size, 1.0 / size));
}

void WeightVector::apply_floor(double floor) {
  double sum = 0.0;
  for (double& v : w_) {
    if (!(v >= floor)) v = floor;
    sum += v;
  }
  for (double& v : w_) v /= sum;
}

void LocalizerConfig::validate() const {
  if (!(variance > 0.0)) throw Error("CGMM variance must be positive");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be positive");
  if (!(mean_magnitude > 0.0)) throw Error("mean magnitude must be positive");
  if (!(gradient_clip > 0.0)) throw Error("gradient clip must be positive");
}

namespace {

// Log-density matrix and the per-feature likelihood ratios
// N_kd / sum_d' w_d' N_kd', evaluated in the log domain.
struct RatioTable {
  Eigen::MatrixXd log_density;  // K x D
  Eigen::VectorXd log_mixture;  // K, log sum_d w_d N_kd
  std::vector<bool> underflow;
};

RatioTable ratio_table(const FeatureFrame& features, const CandidateGrid& grid,
                       std::span<const double> w, double variance, Backend backend) {
  const long k_count = static_cast<long>(features.size());
  const int d_count = grid.size();
  RatioTable t;
  t.log_density.resize(k_count, d_count);
  t.log_mixture.resize(k_count);
  std::vector<char> flags(k_count, 0);
  const double log_min = std::log(DBL_MIN);

  parallel_for(backend, k_count, [&](long k) {
    const Feature& feat = features[k];
    double best = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < d_count; ++d) {
      const double ld = log_complex_gaussian(feat.value, grid.mean(d, feat.bin, feat.channel),
                                             variance);
      t.log_density(k, d) = ld;
      best = std::max(best, ld);
    }
    if (!(best >= log_min)) {
      // No representable density: treat the feature as uninformative.
      flags[k] = 1;
      t.log_density.row(k).setZero();
    }
    double peak = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < d_count; ++d)
      if (w[d] > 0.0) peak = std::max(peak, std::log(w[d]) + t.log_density(k, d));
    double acc = 0.0;
    for (int d = 0; d < d_count; ++d)
      if (w[d] > 0.0) acc += std::exp(std::log(w[d]) + t.log_density(k, d) - peak);
    t.log_mixture(k) = peak + std::log(acc);
  });
  t.underflow.assign(flags.begin(), flags.end());
  return t;
}

}  // namespace

Responsibilities cgmm_responsibilities(const FeatureFrame& features, const CandidateGrid& grid,
                                       const WeightVector& w, double variance, Backend backend) {
  const auto t = ratio_table(features, grid, w.values(), variance, backend);
  Responsibilities r;
  r.underflow = t.underflow;
  r.rho.resize(static_cast<Eigen::Index>(features.size()), grid.size());
  parallel_for(backend, static_cast<long>(features.size()), [&](long k) {
    if (t.underflow[k]) {
      r.rho.row(k).setConstant(1.0 / grid.size());
      return;
    }
    for (int d = 0; d < grid.size(); ++d)
      r.rho(k, d) = w[d] > 0.0
                        ? std::exp(std::log(w[d]) + t.log_density(k, d) - t.log_mixture(k))
                        : 0.0;
  });
  return r;
}

std::vector<double> objective_gradient(const FeatureFrame& features, const CandidateGrid& grid,
                                       const WeightVector& w, const LocalizerConfig& cfg,
                                       Backend backend) {
  const int d_count = grid.size();
  if (w.size() != d_count) throw Error("weight vector does not match the grid");
  std::vector<double> grad(d_count, 0.0);
  const long k_count = static_cast<long>(features.size());
  if (k_count > 0) {
    const auto t = ratio_table(features, grid, w.values(), cfg.variance, backend);
    parallel_for(backend, d_count, [&](long d) {
      double acc = 0.0;
      for (long k = 0; k < k_count; ++k) acc += std::exp(t.log_density(k, d) - t.log_mixture(k));
      grad[d] = -acc / static_cast<double>(k_count);
    });
  }
  for (int d = 0; d < d_count; ++d) grad[d] -= cfg.entropy_weight * (std::log(w[d]) + 1.0);
  return grad;
}

double objective_value(const FeatureFrame& features, const CandidateGrid& grid,
                       std::span<const double> w, const LocalizerConfig& cfg) {
  double loglik = 0.0;
  if (!features.empty()) {
    const auto t = ratio_table(features, grid, w, cfg.variance, Backend::serial);
    loglik = t.log_mixture.mean();
  }
  double entropy = 0.0;
  for (double v : w) entropy -= v * std::log(v);
  return -loglik + cfg.entropy_weight * entropy;
}

WeightVector eg_update(const WeightVector& previous, std::span<const double> gradient,
                       double learning_rate) {
  const int n = previous.size();
  if (static_cast<int>(gradient.size()) != n) throw Error("gradient size mismatch");
  // Exponents are shifted so the largest is zero; the update is invariant to
  // an additive shift of the gradient.
  const double g_min = *std::min_element(gradient.begin(), gradient.end());
  std::vector<double> w(n);
  double sum = 0.0;
  for (int d = 0; d < n; ++d) {
    w[d] = previous[d] * std::exp(-learning_rate * (gradient[d] - g_min));
    sum += w[d];
  }
  for (double& v : w) v /= sum;
  return WeightVector(std::move(w));
}

std::vector<Peak> peak_pick(const WeightVector& w, const std::vector<double>& azimuths,
                            double threshold, double min_separation_deg) {
  const int n = w.size();
  std::vector<Peak> candidates;
  for (int d = 0; d < n; ++d) {
    const double prev = w[(d + n - 1) % n];
    const double next = w[(d + 1) % n];
    if (w[d] >= threshold && w[d] >= prev && w[d] >= next)
      candidates.push_back({d, azimuths[d], w[d]});
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Peak& a, const Peak& b) { return a.weight > b.weight; });
  std::vector<Peak> kept;
  for (const Peak& p : candidates) {
    const bool clear = std::none_of(kept.begin(), kept.end(), [&](const Peak& q) {
      return circular_distance_deg(p.azimuth_deg, q.azimuth_deg) < min_separation_deg;
    });
    if (clear) kept.push_back(p);
  }
  return kept;
}

OnlineLocalizer::OnlineLocalizer(CandidateGrid grid, LocalizerConfig cfg)
    : grid_(std::move(grid)), cfg_(cfg), weights_(WeightVector::uniform(grid_.size())) {
  cfg_.validate();
}

const WeightVector& OnlineLocalizer::update(const FeatureFrame& features, Backend backend) {
  weights_.apply_floor(cfg_.weight_floor);
  FeatureFrame scaled;
  if (cfg_.normalize_features) {
    scaled = features;
    for (auto& f : scaled) {
      const double mag = std::abs(f.value);
      f.value = mag > 0.0 ? f.value * (cfg_.mean_magnitude / mag) : Complex(cfg_.mean_magnitude, 0.0);
    }
  }
  auto grad = objective_gradient(cfg_.normalize_features ? scaled : features, grid_, weights_, cfg_,
                                 backend);
  for (double& g : grad) g = std::max(g, -cfg_.gradient_clip);
  weights_ = eg_update(weights_, grad, cfg_.learning_rate);
  return weights_;
}

std::vector<Peak> OnlineLocalizer::peaks() const {
  return peak_pick(weights_, grid_.azimuths(), cfg_.peak_threshold, cfg_.min_separation_deg);
}

}  // namespace doatrack
