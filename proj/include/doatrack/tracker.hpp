#pragma once

#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "doatrack/common.hpp"

namespace doatrack {

/// Gaussian over the state (u_x, u_y, v): direction unit vector and angular
/// velocity in rad/frame.
struct GaussianState {
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  Eigen::Matrix3d covariance = Eigen::Matrix3d::Identity();

  double azimuth_rad() const { return std::atan2(mean.y(), mean.x()); }
  double azimuth_deg() const { return rad_to_deg(azimuth_rad()); }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(mean, covariance);
  }
};

enum class TrackStatus : int { active = 0, sleeping = 1 };

struct SpeakerState {
  int id = 0;
  GaussianState posterior;
  Eigen::Matrix3d dynamics = Eigen::Matrix3d::Identity();  // Lambda for this speaker
  TrackStatus status = TrackStatus::active;
  int sleep_frames = 0;
  std::deque<double> activity;  // recent sum_d alpha_dn w_d (or wake statistic while asleep)

  template <class Archive>
  void serialize(Archive& ar) {
    ar(id, posterior, dynamics, status, sleep_frames, activity);
  }
};

struct Observation {
  Eigen::Vector2d direction = Eigen::Vector2d::Zero();
  double weight = 0.0;

  template <class Archive>
  void serialize(Archive& ar) {
    ar(direction, weight);
  }
};

using ObservationSet = std::vector<Observation>;

ObservationSet make_observations(const std::vector<double>& azimuths_deg,
                                 std::span<const double> weights);

struct TrackerConfig {
  int max_speakers = 4;
  Eigen::Matrix2d observation_cov = 0.03 * Eigen::Matrix2d::Identity();
  Eigen::Matrix3d dynamics_cov = Eigen::Vector3d(1e-4, 1e-4, 1e-5).asDiagonal();
  double volume = kTwoPi;
  int vem_iterations = 5;
  bool adaptive_dynamics = false;
  double dynamics_floor = 1e-6;

  int birth_window = 25;
  double birth_log_threshold = -2.9;  // calibrate_birth_threshold at weight 0.3
  Eigen::Matrix3d birth_cov = Eigen::Vector3d(0.05, 0.05, 0.01).asDiagonal();
  double birth_min_separation_deg = 15.0;
  // Active tracks closer than this are coalesced: the less certain one sleeps.
  double merge_distance_deg = 2.0;

  double activity_threshold = 0.05;
  int activity_window = 12;
  int sleep_timeout = 125;
  // Frames whose feature count is below this fraction of the possible
  // (bin, channel) pairs carry no evidence for activity, wake-up or birth.
  double min_evidence_fraction = 0.02;

  void validate() const;
};

/// Circular-motion transition for heading theta (radians).
Eigen::Matrix3d transition_matrix(double theta);

/// Predictive Gaussian D mu, D Gamma D^T + Lambda with D built from the
/// heading of `posterior`. Throws Error for a non-finite state.
GaussianState predict(const GaussianState& posterior, const Eigen::Matrix3d& dynamics_cov);

/// q(Z_td = n): rows are observations, column 0 is background and column n
/// the n-th entry of `speakers`.
using Assignments = Eigen::MatrixXd;

Assignments e_z_step(const ObservationSet& obs, std::span<const GaussianState> speakers,
                     const TrackerConfig& cfg);

/// Variational posterior of one speaker given its assignment column.
GaussianState e_s_step(const ObservationSet& obs, const Assignments& alpha, int column,
                       const GaussianState& previous, const Eigen::Matrix3d& dynamics_cov,
                       const Eigen::Matrix2d& observation_cov);

/// Dynamics covariance update. Fixed mode returns cfg.dynamics_cov.
Eigen::Matrix3d m_step(const GaussianState& current, const GaussianState& previous,
                       const TrackerConfig& cfg);

struct VemResult {
  std::vector<GaussianState> posteriors;
  std::vector<Eigen::Matrix3d> dynamics;
  Assignments alpha;
};

VemResult vem_iterate(const ObservationSet& obs, std::span<const GaussianState> previous,
                      std::span<const Eigen::Matrix3d> dynamics, const TrackerConfig& cfg);

/// Per-frame geometric mean (in log form) of the prediction-error
/// decomposition of the marginal likelihood of a direction sequence under the
/// tracker dynamics, starting from a diffuse prior at the first element.
/// Optionally returns the final filtered state.
double sequence_log_likelihood(std::span<const Observation> sequence, const TrackerConfig& cfg,
                               GaussianState* final_state = nullptr);

struct BirthCalibration {
  double threshold = 0.0;
  double smooth_low = 0.0;    // 5th percentile of smooth-trajectory scores
  double random_high = 0.0;   // 95th percentile of random-sequence scores
  double smooth_above = 0.0;  // fraction of smooth scores above the threshold
  double random_below = 0.0;  // fraction of random scores below the threshold
};

/// Monte-Carlo choice of the birth threshold: scores of constant-velocity
/// grid-quantized trajectories against uniformly random grid sequences, all
/// observations at `weight`. The threshold is the midpoint between the 5th
/// percentile of the former and the 95th percentile of the latter.
BirthCalibration calibrate_birth_threshold(const TrackerConfig& cfg,
                                           const std::vector<double>& azimuths_deg, int trials,
                                           std::uint64_t seed, double weight = 0.3,
                                           double max_speed_deg = 0.25);

/// Sum_d alpha_dn w_d for one assignment column.
double weighted_assignment(const ObservationSet& obs, const Assignments& alpha, int column);

/// Per-frame track report.
struct TrackEstimate {
  int id = 0;
  double azimuth_deg = 0.0;
  double velocity = 0.0;  // rad/frame
  bool active = true;
  double trace = 0.0;     // posterior covariance trace
};

struct TrackerFrame {
  Assignments alpha;
  std::vector<TrackEstimate> tracks;
  std::optional<int> born;  // id of a track born (or re-awoken by birth) this frame
  std::optional<double> birth_score;  // set when a full birth window was scored
};

/// Multi-speaker VEM tracker with birth, sleeping and activity detection.
class Tracker {
 public:
  Tracker() = default;
  Tracker(TrackerConfig cfg, std::vector<double> azimuths_deg);

  /// `evidence` false marks a frame without localization evidence: the
  /// posterior update still runs, activity and wake statistics record zero
  /// and the frame is left out of the birth window.
  TrackerFrame step(std::span<const double> weights, bool evidence = true);

  const std::vector<SpeakerState>& tracks() const { return tracks_; }
  const TrackerConfig& config() const { return cfg_; }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(tracks_, birth_window_, next_id_);
  }

 private:
  void run_birth(const ObservationSet& obs, const Assignments& alpha, TrackerFrame& out);

  TrackerConfig cfg_;
  std::vector<double> azimuths_;
  std::vector<SpeakerState> tracks_;
  std::deque<std::optional<Observation>> birth_window_;
  int next_id_ = 1;
};

}  // namespace doatrack
