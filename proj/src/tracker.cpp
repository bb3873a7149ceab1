#include "doatrack/tracker.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>

namespace doatrack {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void renormalize_direction(GaussianState& s) {
  const double norm = s.mean.head<2>().norm();
  if (norm > 0.0 && std::isfinite(norm)) s.mean.head<2>() /= norm;
}

Eigen::Matrix3d symmetrized(const Eigen::Matrix3d& m) { return 0.5 * (m + m.transpose()); }

// log N(b; m, cov) for a 2-D Gaussian.
double log_gauss2(const Eigen::Vector2d& residual, const Eigen::Matrix2d& cov) {
  const double det = cov.determinant();
  if (!(det > 0.0)) return kNegInf;
  const double maha = residual.dot(cov.inverse() * residual);
  return -std::log(kTwoPi) - 0.5 * std::log(det) - 0.5 * maha;
}

// Expected log observation density under q(s_n), i.e. the E-Z numerator term.
double expected_log_density(const Observation& o, const GaussianState& q,
                            const Eigen::Matrix2d& sigma, const Eigen::Matrix2d& sigma_inv) {
  if (!(o.weight > 0.0)) return kNegInf;
  const Eigen::Vector2d r = o.direction - q.mean.head<2>();
  const Eigen::Matrix2d cov = sigma / o.weight;
  const double trace_term = (sigma_inv * q.covariance.topLeftCorner<2, 2>()).trace();
  return log_gauss2(r, cov) - 0.5 * o.weight * trace_term;
}

}  // namespace

ObservationSet make_observations(const std::vector<double>& azimuths_deg,
                                 std::span<const double> weights) {
  if (azimuths_deg.size() != weights.size()) throw Error("observation size mismatch");
  ObservationSet obs(weights.size());
  for (std::size_t d = 0; d < weights.size(); ++d) {
    const double a = deg_to_rad(azimuths_deg[d]);
    obs[d].direction = {std::cos(a), std::sin(a)};
    obs[d].weight = weights[d];
  }
  return obs;
}

void TrackerConfig::validate() const {
  if (max_speakers < 1) throw Error("max_speakers must be >= 1");
  if (Eigen::LLT<Eigen::Matrix2d>(observation_cov).info() != Eigen::Success)
    throw Error("observation covariance must be positive-definite");
  if (Eigen::LLT<Eigen::Matrix3d>(dynamics_cov).info() != Eigen::Success)
    throw Error("dynamics covariance must be positive-definite");
  if (!(volume > 0.0)) throw Error("observation-space volume must be positive");
  if (vem_iterations < 1) throw Error("vem_iterations must be >= 1");
  if (birth_window < 2) throw Error("birth_window must be >= 2");
  if (activity_window < 1) throw Error("activity_window must be >= 1");
  if (!(min_evidence_fraction >= 0.0 && min_evidence_fraction <= 1.0))
    throw Error("min_evidence_fraction must lie in [0, 1]");
}

Eigen::Matrix3d transition_matrix(double theta) {
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(0, 2) = -std::sin(theta);
  d(1, 2) = std::cos(theta);
  return d;
}

GaussianState predict(const GaussianState& posterior, const Eigen::Matrix3d& dynamics_cov) {
  if (!posterior.mean.allFinite() || !posterior.covariance.allFinite())
    throw Error("non-finite speaker state");
  const Eigen::Matrix3d d = transition_matrix(posterior.azimuth_rad());
  GaussianState out;
  out.mean = d * posterior.mean;
  out.covariance = symmetrized(d * posterior.covariance * d.transpose() + dynamics_cov);
  return out;
}

Assignments e_z_step(const ObservationSet& obs, std::span<const GaussianState> speakers,
                     const TrackerConfig& cfg) {
  const int n_obs = static_cast<int>(obs.size());
  const int n_spk = static_cast<int>(speakers.size());
  const double log_prior = -std::log(static_cast<double>(cfg.max_speakers + 1));
  const Eigen::Matrix2d sigma_inv = cfg.observation_cov.inverse();
  Assignments alpha(n_obs, n_spk + 1);
  std::vector<double> logs(n_spk + 1);
  for (int d = 0; d < n_obs; ++d) {
    logs[0] = log_prior - std::log(cfg.volume);
    for (int n = 0; n < n_spk; ++n)
      logs[n + 1] =
          log_prior + expected_log_density(obs[d], speakers[n], cfg.observation_cov, sigma_inv);
    const double peak = *std::max_element(logs.begin(), logs.end());
    if (!std::isfinite(peak)) {
      alpha.row(d).setZero();
      alpha(d, 0) = 1.0;
      continue;
    }
    double sum = 0.0;
    for (int n = 0; n <= n_spk; ++n) sum += std::exp(logs[n] - peak);
    for (int n = 0; n <= n_spk; ++n) alpha(d, n) = std::exp(logs[n] - peak) / sum;
  }
  return alpha;
}

double weighted_assignment(const ObservationSet& obs, const Assignments& alpha, int column) {
  double s = 0.0;
  for (int d = 0; d < static_cast<int>(obs.size()); ++d) s += alpha(d, column) * obs[d].weight;
  return s;
}

GaussianState e_s_step(const ObservationSet& obs, const Assignments& alpha, int column,
                       const GaussianState& previous, const Eigen::Matrix3d& dynamics_cov,
                       const Eigen::Matrix2d& observation_cov) {
  const GaussianState pred = predict(previous, dynamics_cov);
  double mass = 0.0;
  Eigen::Vector2d weighted_sum = Eigen::Vector2d::Zero();
  for (int d = 0; d < static_cast<int>(obs.size()); ++d) {
    const double aw = alpha(d, column) * obs[d].weight;
    mass += aw;
    weighted_sum += aw * obs[d].direction;
  }
  if (!(mass > 0.0)) return pred;

  // The information-form update with precision mass * Sigma^-1 equals a
  // Kalman update with the mass-averaged direction and noise Sigma / mass.
  const Eigen::Matrix<double, 3, 2> pmt = pred.covariance.leftCols<2>();
  Eigen::Matrix2d innovation_cov = pred.covariance.topLeftCorner<2, 2>() + observation_cov / mass;
  Eigen::LLT<Eigen::Matrix2d> llt(innovation_cov);
  if (llt.info() != Eigen::Success) {
    innovation_cov += 1e-9 * Eigen::Matrix2d::Identity();
    llt.compute(innovation_cov);
  }
  const Eigen::Matrix<double, 3, 2> gain = llt.solve(pmt.transpose()).transpose();
  const Eigen::Vector2d innovation = weighted_sum / mass - pred.mean.head<2>();

  GaussianState out;
  out.mean = pred.mean + gain * innovation;
  out.covariance = symmetrized(pred.covariance - gain * pmt.transpose());
  return out;
}

Eigen::Matrix3d m_step(const GaussianState& current, const GaussianState& previous,
                       const TrackerConfig& cfg) {
  if (!cfg.adaptive_dynamics) return cfg.dynamics_cov;
  const Eigen::Matrix3d d = transition_matrix(previous.azimuth_rad());
  const Eigen::Vector3d r = current.mean - d * previous.mean;
  const Eigen::Matrix3d raw = symmetrized(current.covariance +
                                          d * previous.covariance * d.transpose() +
                                          r * r.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(raw);
  const Eigen::Vector3d clamped = eig.eigenvalues().cwiseMax(cfg.dynamics_floor);
  return symmetrized(eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose());
}

VemResult vem_iterate(const ObservationSet& obs, std::span<const GaussianState> previous,
                      std::span<const Eigen::Matrix3d> dynamics, const TrackerConfig& cfg) {
  const std::size_t n = previous.size();
  VemResult r;
  r.dynamics.assign(dynamics.begin(), dynamics.end());
  r.posteriors.reserve(n);
  for (std::size_t k = 0; k < n; ++k) r.posteriors.push_back(predict(previous[k], r.dynamics[k]));
  for (int it = 0; it < cfg.vem_iterations; ++it) {
    r.alpha = e_z_step(obs, r.posteriors, cfg);
    for (std::size_t k = 0; k < n; ++k) {
      r.posteriors[k] = e_s_step(obs, r.alpha, static_cast<int>(k) + 1, previous[k],
                                 r.dynamics[k], cfg.observation_cov);
      if (cfg.adaptive_dynamics) r.dynamics[k] = m_step(r.posteriors[k], previous[k], cfg);
    }
  }
  if (n == 0 && cfg.vem_iterations > 0) r.alpha = e_z_step(obs, {}, cfg);
  return r;
}

double sequence_log_likelihood(std::span<const Observation> sequence, const TrackerConfig& cfg,
                               GaussianState* final_state) {
  if (sequence.size() < 2) return kNegInf;
  for (const auto& o : sequence)
    if (!(o.weight > 0.0)) return kNegInf;

  GaussianState s;
  s.mean << sequence[0].direction, 0.0;
  s.covariance.setZero();
  s.covariance.topLeftCorner<2, 2>() = cfg.observation_cov / sequence[0].weight;
  s.covariance(2, 2) = cfg.birth_cov(2, 2);

  double total = 0.0;
  for (std::size_t t = 1; t < sequence.size(); ++t) {
    const GaussianState pred = predict(s, cfg.dynamics_cov);
    const Eigen::Matrix2d noise = cfg.observation_cov / sequence[t].weight;
    const Eigen::Matrix2d innovation_cov = pred.covariance.topLeftCorner<2, 2>() + noise;
    const Eigen::Vector2d innovation = sequence[t].direction - pred.mean.head<2>();
    total += log_gauss2(innovation, innovation_cov);

    const Eigen::Matrix<double, 3, 2> pmt = pred.covariance.leftCols<2>();
    const Eigen::Matrix<double, 3, 2> gain = pmt * innovation_cov.inverse();
    s.mean = pred.mean + gain * innovation;
    s.covariance = symmetrized(pred.covariance - gain * pmt.transpose());
    renormalize_direction(s);
  }
  if (final_state) *final_state = s;
  return total / static_cast<double>(sequence.size() - 1);
}

BirthCalibration calibrate_birth_threshold(const TrackerConfig& cfg,
                                           const std::vector<double>& azimuths_deg, int trials,
                                           std::uint64_t seed, double weight,
                                           double max_speed_deg) {
  if (trials < 1 || azimuths_deg.empty()) throw Error("calibration needs trials and a grid");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit;
  std::uniform_int_distribution<std::size_t> pick(0, azimuths_deg.size() - 1);
  const auto nearest = [&](double az) {
    std::size_t best = 0;
    for (std::size_t d = 1; d < azimuths_deg.size(); ++d)
      if (circular_distance_deg(azimuths_deg[d], az) < circular_distance_deg(azimuths_deg[best], az))
        best = d;
    return azimuths_deg[best];
  };
  const auto observe = [&](double az) {
    Observation o;
    o.direction << std::cos(deg_to_rad(az)), std::sin(deg_to_rad(az));
    o.weight = weight;
    return o;
  };

  std::vector<double> smooth, random;
  std::vector<Observation> seq(static_cast<std::size_t>(cfg.birth_window));
  for (int k = 0; k < trials; ++k) {
    const double start = -180.0 + 360.0 * unit(rng);
    const double speed = max_speed_deg * (2.0 * unit(rng) - 1.0);
    for (std::size_t t = 0; t < seq.size(); ++t)
      seq[t] = observe(nearest(wrap_degrees(start + speed * static_cast<double>(t))));
    smooth.push_back(sequence_log_likelihood(seq, cfg));
    for (auto& o : seq) o = observe(azimuths_deg[pick(rng)]);
    random.push_back(sequence_log_likelihood(seq, cfg));
  }
  const auto quantile = [](std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    return v[static_cast<std::size_t>(q * static_cast<double>(v.size() - 1))];
  };
  BirthCalibration c;
  c.smooth_low = quantile(smooth, 0.05);
  c.random_high = quantile(random, 0.95);
  c.threshold = 0.5 * (c.smooth_low + c.random_high);
  const auto frac = [](const std::vector<double>& v, auto pred) {
    return static_cast<double>(std::count_if(v.begin(), v.end(), pred)) / static_cast<double>(v.size());
  };
  c.smooth_above = frac(smooth, [&](double x) { return x > c.threshold; });
  c.random_below = frac(random, [&](double x) { return x <= c.threshold; });
  return c;
}

// ---------------------------------------------------------------------------

Tracker::Tracker(TrackerConfig cfg, std::vector<double> azimuths_deg)
    : cfg_(std::move(cfg)), azimuths_(std::move(azimuths_deg)) {
  cfg_.validate();
}

TrackerFrame Tracker::step(std::span<const double> weights, bool evidence) {
  const ObservationSet obs = make_observations(azimuths_, weights);
  TrackerFrame out;

  std::vector<std::size_t> live;
  std::vector<GaussianState> previous;
  std::vector<Eigen::Matrix3d> dynamics;
  for (std::size_t k = 0; k < tracks_.size(); ++k) {
    if (tracks_[k].status != TrackStatus::active) continue;
    live.push_back(k);
    previous.push_back(tracks_[k].posterior);
    dynamics.push_back(tracks_[k].dynamics);
  }
  const VemResult vem = vem_iterate(obs, previous, dynamics, cfg_);
  out.alpha = vem.alpha;

  for (std::size_t n = 0; n < live.size(); ++n) {
    SpeakerState& s = tracks_[live[n]];
    s.posterior = vem.posteriors[n];
    s.dynamics = vem.dynamics[n];
    renormalize_direction(s.posterior);
  }

  // Sleeping tracks are propagated by the dynamics only; their wake-up
  // statistic is the background mass they would claim.
  const Eigen::Matrix2d sigma_inv = cfg_.observation_cov.inverse();
  const double log_background = -std::log(cfg_.volume);
  for (auto& s : tracks_) {
    if (s.status != TrackStatus::sleeping) continue;
    s.posterior = predict(s.posterior, s.dynamics);
    renormalize_direction(s.posterior);
    ++s.sleep_frames;
    double claim = 0.0;
    for (std::size_t d = 0; evidence && d < obs.size(); ++d) {
      const double ld = expected_log_density(obs[d], s.posterior, cfg_.observation_cov, sigma_inv);
      const double share = 1.0 / (1.0 + std::exp(log_background - ld));
      claim += out.alpha(static_cast<Eigen::Index>(d), 0) * share * obs[d].weight;
    }
    s.activity.push_back(claim);
    while (static_cast<int>(s.activity.size()) > cfg_.activity_window) s.activity.pop_front();
  }

  for (std::size_t n = 0; n < live.size(); ++n) {
    SpeakerState& s = tracks_[live[n]];
    s.activity.push_back(evidence ? weighted_assignment(obs, out.alpha, static_cast<int>(n) + 1) : 0.0);
    while (static_cast<int>(s.activity.size()) > cfg_.activity_window) s.activity.pop_front();
  }

  for (std::size_t k = 0; k < tracks_.size(); ++k) {
    SpeakerState& s = tracks_[k];
    const double mean = std::accumulate(s.activity.begin(), s.activity.end(), 0.0) /
                        static_cast<double>(std::max<std::size_t>(s.activity.size(), 1));
    const bool was_live = std::find(live.begin(), live.end(), k) != live.end();
    if (was_live && mean <= cfg_.activity_threshold) {
      s.status = TrackStatus::sleeping;
      s.sleep_frames = 0;
      s.activity.clear();
    } else if (!was_live && mean > cfg_.activity_threshold) {
      s.status = TrackStatus::active;
      s.sleep_frames = 0;
      s.activity.clear();
      s.activity.push_back(mean);
      // The window holds the observations that woke this track.
      birth_window_.clear();
    }
  }
  // Two active tracks on the same direction receive identical updates and
  // never separate again; the less certain one goes to sleep.
  for (std::size_t a = 0; a < tracks_.size(); ++a) {
    for (std::size_t b = a + 1; b < tracks_.size(); ++b) {
      SpeakerState& x = tracks_[a];
      SpeakerState& y = tracks_[b];
      if (x.status != TrackStatus::active || y.status != TrackStatus::active) continue;
      if (circular_distance_deg(x.posterior.azimuth_deg(), y.posterior.azimuth_deg()) >=
          cfg_.merge_distance_deg)
        continue;
      SpeakerState& loser =
          y.posterior.covariance.trace() >= x.posterior.covariance.trace() ? y : x;
      loser.status = TrackStatus::sleeping;
      loser.sleep_frames = 0;
      loser.activity.clear();
    }
  }
  std::erase_if(tracks_, [&](const SpeakerState& s) {
    return s.status == TrackStatus::sleeping && s.sleep_frames > cfg_.sleep_timeout;
  });

  if (evidence) run_birth(obs, out.alpha, out);

  for (const auto& s : tracks_) {
    out.tracks.push_back({s.id, s.posterior.azimuth_deg(), s.posterior.mean(2),
                          s.status == TrackStatus::active, s.posterior.covariance.trace()});
  }
  return out;
}

void Tracker::run_birth(const ObservationSet& obs, const Assignments& alpha, TrackerFrame& out) {
  std::optional<Observation> pick;
  for (int d = 0; d < static_cast<int>(obs.size()); ++d) {
    if (alpha(d, 0) < alpha.row(d).maxCoeff()) continue;
    if (!pick || obs[d].weight > pick->weight) pick = obs[d];
  }
  birth_window_.push_back(pick);
  while (static_cast<int>(birth_window_.size()) > cfg_.birth_window) birth_window_.pop_front();
  if (static_cast<int>(birth_window_.size()) < cfg_.birth_window) return;
  if (std::any_of(birth_window_.begin(), birth_window_.end(),
                  [](const auto& o) { return !o.has_value(); }))
    return;

  std::vector<Observation> seq;
  seq.reserve(birth_window_.size());
  for (const auto& o : birth_window_) seq.push_back(*o);
  GaussianState filtered;
  const double score = sequence_log_likelihood(seq, cfg_, &filtered);
  out.birth_score = score;
  if (!(score > cfg_.birth_log_threshold)) return;

  const double azimuth = filtered.azimuth_deg();

  SpeakerState* nearest = nullptr;
  double nearest_dist = std::numeric_limits<double>::infinity();
  for (auto& s : tracks_) {
    const double dist = circular_distance_deg(s.posterior.azimuth_deg(), azimuth);
    if (dist < nearest_dist) {
      nearest_dist = dist;
      nearest = &s;
    }
  }

  GaussianState init;
  init.mean << std::cos(deg_to_rad(azimuth)), std::sin(deg_to_rad(azimuth)), filtered.mean(2);
  init.covariance = cfg_.birth_cov;

  if (nearest && nearest_dist < cfg_.birth_min_separation_deg) {
    if (nearest->status == TrackStatus::active) return;
    nearest->status = TrackStatus::active;
    nearest->posterior = init;
    nearest->sleep_frames = 0;
    nearest->activity.clear();
    out.born = nearest->id;
    birth_window_.clear();
    return;
  }
  if (static_cast<int>(tracks_.size()) >= cfg_.max_speakers) return;

  SpeakerState s;
  s.id = next_id_++;
  s.posterior = init;
  s.dynamics = cfg_.dynamics_cov;
  s.status = TrackStatus::active;
  tracks_.push_back(std::move(s));
  out.born = tracks_.back().id;
  birth_window_.clear();
}

}  // namespace doatrack
