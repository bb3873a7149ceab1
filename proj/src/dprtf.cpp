#include "doatrack/dprtf.hpp"

#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>
#include <Eigen/LU>

#include "doatrack/parallel.hpp"

namespace doatrack {

double forgetting_from_memory(int frames) {
  if (frames < 2) throw Error("memory must span at least 2 frames");
  return static_cast<double>(frames - 1) / static_cast<double>(frames + 1);
}

double CtfConfig::forgetting_factor() const {
  return forgetting ? *forgetting : forgetting_from_memory(memory_frames);
}

void CtfConfig::validate() const {
  if (ctf_length < 1) throw Error("ctf_length must be >= 1");
  const double lambda = forgetting_factor();
  if (!(lambda > 0.0 && lambda <= 1.0)) throw Error("forgetting factor must be in (0, 1]");
  if (!(init_delta > 0.0)) throw Error("init_delta must be positive");
  if (!(consistency_tol > 0.0)) throw Error("consistency_tol must be positive");
}

std::pair<int, int> pair_channels(int channels, int m) {
  for (int i = 0; i < channels; ++i) {
    const int span = channels - 1 - i;
    if (m < span) return {i, i + 1 + m};
    m -= span;
  }
  throw Error("pair index out of range");
}

CrossRelationRow build_cross_relation(const Eigen::MatrixXcd& history, int i, int j) {
  const int channels = static_cast<int>(history.rows());
  const int q = static_cast<int>(history.cols());
  if (i < 0 || j >= channels || i >= j) throw Error("invalid microphone pair");

  // Full vector: x^j in block i, -x^i in block j, zeros elsewhere.
  Eigen::VectorXcd full = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(channels) * q);
  full.segment(static_cast<Eigen::Index>(i) * q, q) = history.row(j).transpose();
  full.segment(static_cast<Eigen::Index>(j) * q, q) = -history.row(i).transpose();

  CrossRelationRow row;
  row.target = -full(0);
  row.regressor = full.tail(full.size() - 1);
  int m = 0;
  for (int a = 0; a < i; ++a) m += channels - 1 - a;
  row.pair = m + (j - i - 1);
  return row;
}

RlsState::RlsState(int dim, double delta)
    : estimate(Eigen::VectorXcd::Zero(dim)),
      inverse_covariance(delta * Eigen::MatrixXcd::Identity(dim, dim)),
      information(Eigen::MatrixXcd::Zero(dim, dim)),
      cross(Eigen::VectorXcd::Zero(dim)),
      prior_weight(1.0 / delta) {}

namespace {

void resymmetrize(Eigen::MatrixXcd& p) {
  const double scale = p.cwiseAbs().maxCoeff();
  const double asym = (p - p.adjoint()).cwiseAbs().maxCoeff();
  if (scale > 0.0 && asym > 1e-6 * scale) {
    Eigen::MatrixXcd sym = 0.5 * (p + p.adjoint());
    p = std::move(sym);
  }
}

void try_exact_switch(RlsState& s, double rcond) {
  if (s.rows < s.dim()) return;
  // LDLT's rcond() is only an estimate and can miss exact rank deficiency,
  // so the switch is decided on the eigenvalue spread.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> eig(s.information);
  if (eig.info() != Eigen::Success) return;
  const Eigen::VectorXd& ev = eig.eigenvalues();
  if (!(ev(0) > 0.0 && ev(0) >= rcond * ev(ev.size() - 1))) return;
  s.inverse_covariance = eig.eigenvectors() * ev.cwiseInverse().asDiagonal() * eig.eigenvectors().adjoint();
  s.inverse_covariance = 0.5 * (s.inverse_covariance + s.inverse_covariance.adjoint()).eval();
  s.estimate = s.inverse_covariance * s.cross;
  s.exact = true;
  s.prior_weight = 0.0;
  s.information.resize(0, 0);
  s.cross.resize(0);
}

}  // namespace

void rls_begin_frame(RlsState& state, double lambda) {
  ++state.frames;
  if (lambda != 1.0) {
    state.inverse_covariance /= lambda;
    if (!state.exact) {
      state.information *= lambda;
      state.cross *= lambda;
      state.prior_weight *= lambda;
    }
  }
  resymmetrize(state.inverse_covariance);
}

bool rls_update(RlsState& state, const CrossRelationRow& row, double exact_rcond) {
  if (!row.regressor.allFinite() || !std::isfinite(row.target.real()) ||
      !std::isfinite(row.target.imag()))
    return false;
  if (row.regressor.size() != state.dim()) throw Error("regressor dimension mismatch");

  // x^T a = y  <=>  h^H a = y with h = conj(x).
  const Eigen::VectorXcd h = row.regressor.conjugate();
  const Eigen::VectorXcd ph = state.inverse_covariance * h;
  const double denom = 1.0 + h.dot(ph).real();
  const Eigen::VectorXcd gain = ph / denom;
  const Complex error = row.target - h.dot(state.estimate);
  state.estimate += gain * error;
  state.inverse_covariance -= gain * ph.adjoint();
  ++state.rows;

  if (!state.exact) {
    state.information += h * h.adjoint();
    state.cross += h * row.target;
    try_exact_switch(state, exact_rcond);
  }
  return true;
}

std::vector<Complex> extract_dprtf(const RlsState& state, int channels, int ctf_length) {
  std::vector<Complex> out(channels - 1);
  for (int i = 1; i < channels; ++i)
    out[i - 1] = state.estimate((ctf_length - 1) + (i - 1) * ctf_length);
  return out;
}

std::vector<bool> consistency_test(std::span<const Complex> current,
                                   std::span<const Complex> previous, double tol, double eps) {
  std::vector<bool> keep(current.size(), true);
  if (previous.empty()) return keep;
  for (std::size_t k = 0; k < current.size(); ++k) {
    const double dist = std::abs(current[k] - previous[k]) / std::max(std::abs(previous[k]), eps);
    keep[k] = dist <= tol;
  }
  return keep;
}

// ---------------------------------------------------------------------------

DpRtfBank::DpRtfBank(int channels, int bins, std::vector<int> active_bins, const CtfConfig& cfg)
    : channels_(channels),
      bins_(bins),
      ctf_length_(cfg.ctf_length),
      reference_(cfg.reference_channel),
      lambda_(cfg.forgetting_factor()),
      rcond_(cfg.exact_rcond),
      tol_(cfg.consistency_tol),
      eps_(cfg.consistency_eps),
      bins_active_(std::move(active_bins)) {
  cfg.validate();
  if (channels < 2) throw Error("DP-RTF estimation needs at least 2 channels");
  if (reference_ < 0 || reference_ >= channels) throw Error("reference channel out of range");
  const int dim = channels * ctf_length_ - 1;
  for (int f : bins_active_) {
    if (f < 0 || f >= bins) throw Error("active bin out of range");
  }
  states_.assign(bins_active_.size(), RlsState(dim, cfg.init_delta));
  history_.assign(bins_active_.size(), Eigen::MatrixXcd::Zero(channels, ctf_length_));
  previous_.assign(bins_active_.size(), std::vector<Complex>(channels - 1));
  has_previous_.assign(bins_active_.size(), 0);
}

const RlsState& DpRtfBank::state(int bin) const {
  for (std::size_t k = 0; k < bins_active_.size(); ++k)
    if (bins_active_[k] == bin) return states_[k];
  throw Error("bin is not tracked by this bank");
}

FeatureFrame DpRtfBank::process_frame(std::span<const Complex> frame,
                                      std::span<const std::uint8_t> labels, Backend backend) {
  const long n = static_cast<long>(bins_active_.size());
  const int pairs = pair_count(channels_);
  std::vector<FeatureFrame> per_bin(n);

  parallel_for(backend, n, [&](long k) {
    const int f = bins_active_[k];
    Eigen::MatrixXcd& hist = history_[k];
    for (int q = ctf_length_ - 1; q > 0; --q) hist.col(q) = hist.col(q - 1);
    // Row 0 is the reference, then the remaining channels in order.
    hist(0, 0) = frame[static_cast<std::size_t>(reference_) * bins_ + f];
    for (int c = 0, r = 1; c < channels_; ++c) {
      if (c == reference_) continue;
      hist(r++, 0) = frame[static_cast<std::size_t>(c) * bins_ + f];
    }
    if (!labels[f]) return;

    RlsState& st = states_[k];
    rls_begin_frame(st, lambda_);
    for (int m = 0; m < pairs; ++m) {
      const auto [i, j] = pair_channels(channels_, m);
      rls_update(st, build_cross_relation(hist, i, j), rcond_);
    }
    const auto current = extract_dprtf(st, channels_, ctf_length_);
    const auto keep = has_previous_[k]
                          ? consistency_test(current, previous_[k], tol_, eps_)
                          : consistency_test(current, {}, tol_, eps_);
    for (int c = 0; c < channels_ - 1; ++c) {
      const bool finite = std::isfinite(current[c].real()) && std::isfinite(current[c].imag());
      if (keep[c] && finite) per_bin[k].push_back(Feature{f, c + 1, current[c]});
    }
    previous_[k] = current;
    has_previous_[k] = 1;
  });

  FeatureFrame out;
  for (auto& v : per_bin) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace doatrack
