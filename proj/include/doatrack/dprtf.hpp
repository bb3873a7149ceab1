#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "doatrack/common.hpp"

namespace doatrack {

/// Forgetting factor giving an effective memory of `frames` frames:
/// (P - 1) / (P + 1).
double forgetting_from_memory(int frames);

struct CtfConfig {
  int ctf_length = 8;        // Q, in frames
  int memory_frames = 25;    // P; ignored when `forgetting` is set
  std::optional<double> forgetting;
  int reference_channel = 0;
  double init_delta = 1e3;   // diffuse start: inverse covariance = delta * I
  double exact_rcond = 1e-9; // switch to exact LS once the data alone are this well conditioned
  double consistency_tol = 0.35;
  double consistency_eps = 1e-6;
  double min_freq_hz = 100.0;
  std::optional<double> max_freq_hz;  // default: spatial aliasing limit of the array

  double forgetting_factor() const;
  void validate() const;
};

/// One cross-relation equation x^T a = y for a microphone pair.
struct CrossRelationRow {
  Eigen::VectorXcd regressor;  // length I*Q - 1
  Complex target{};
  int pair = 0;                // 0-based pair index in (i, j) lexicographic order
};

/// Number of unordered microphone pairs I(I-1)/2.
inline int pair_count(int channels) { return channels * (channels - 1) / 2; }

/// Pair (i, j), i < j, for 0-based pair index m in lexicographic order.
std::pair<int, int> pair_channels(int channels, int m);

/// Builds the pair (i, j) row from per-channel CTF-length histories.
/// `history` is channels x Q with column q holding frame t - q; channel 0 is
/// the reference. Throws Error for i >= j or out-of-range channels.
CrossRelationRow build_cross_relation(const Eigen::MatrixXcd& history, int i, int j);

/// Recursive least-squares state for one frequency bin.
///
/// Starts from the usual diffuse prior (estimate 0, inverse covariance
/// delta * I) while also accumulating the information matrix. As soon as the
/// data alone determine the estimate (reciprocal condition >= exact_rcond)
/// the prior is dropped and the state switches to the exact recursive form,
/// from which point the estimate equals the (weighted) least-squares solution
/// of all rows seen.
struct RlsState {
  Eigen::VectorXcd estimate;
  Eigen::MatrixXcd inverse_covariance;  // Phi^-1
  Eigen::MatrixXcd information;         // Phi, kept until exact
  Eigen::VectorXcd cross;               // sum of lambda-weighted conj(x) * y, kept until exact
  double prior_weight = 0.0;            // lambda^t / delta while diffuse
  long frames = 0;
  long rows = 0;
  bool exact = false;

  RlsState() = default;
  RlsState(int dim, double delta);

  int dim() const { return static_cast<int>(estimate.size()); }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(estimate, inverse_covariance, information, cross, prior_weight, frames, rows, exact);
  }
};

/// Opens a new frame: applies the forgetting factor to all previous frames.
void rls_begin_frame(RlsState& state, double lambda);

/// Adds one row of the current frame. Returns false (state untouched) for a
/// non-finite row.
bool rls_update(RlsState& state, const CrossRelationRow& row, double exact_rcond = 1e-9);

/// DP-RTF of every non-reference channel: entries at (Q-1) + (i-1) * Q.
std::vector<Complex> extract_dprtf(const RlsState& state, int channels, int ctf_length);

/// Temporal-stability check: channel k is kept iff
/// |current_k - previous_k| / max(|previous_k|, eps) <= tol. Without history
/// everything is kept.
std::vector<bool> consistency_test(std::span<const Complex> current,
                                   std::span<const Complex> previous, double tol, double eps);

struct Feature {
  int bin = 0;
  int channel = 0;  // 1..I-1, relative to the reference
  Complex value{};
};

using FeatureFrame = std::vector<Feature>;

/// Bank of per-bin RLS estimators with their CTF-length frame histories.
class DpRtfBank {
 public:
  DpRtfBank() = default;
  /// Input channels are reordered internally so cfg.reference_channel is first.
  DpRtfBank(int channels, int bins, std::vector<int> active_bins, const CtfConfig& cfg);

  /// One frame (channels x bins, row-major, already denoised). Speech bins
  /// update their RLS state; noise bins are skipped.
  FeatureFrame process_frame(std::span<const Complex> frame, std::span<const std::uint8_t> labels,
                             Backend backend = Backend::openmp);

  const RlsState& state(int bin) const;
  const std::vector<int>& active_bins() const { return bins_active_; }
  int channels() const { return channels_; }

  template <class Archive>
  void serialize(Archive& ar) {
    ar(channels_, bins_, bins_active_, lambda_, states_, history_, previous_, has_previous_);
  }

 private:
  int channels_ = 0;
  int bins_ = 0;
  int ctf_length_ = 1;
  int reference_ = 0;
  double lambda_ = 1.0;
  double rcond_ = 1e-9;
  double tol_ = 0.35;
  double eps_ = 1e-6;
  std::vector<int> bins_active_;
  std::vector<RlsState> states_;                   // one per active bin
  std::vector<Eigen::MatrixXcd> history_;          // channels x Q per active bin
  std::vector<std::vector<Complex>> previous_;     // last DP-RTFs per active bin
  std::vector<std::uint8_t> has_previous_;
};

}  // namespace doatrack
