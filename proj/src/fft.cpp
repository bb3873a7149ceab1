#include "doatrack/fft.hpp"

#include <algorithm>
#include <mutex>
#include <vector>

#include <fftw3.h>

namespace doatrack {
namespace {

// The FFTW planner is not re-entrant.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

RealFft::RealFft(int size) : size_(size) {
  if (size < 2) throw Error("fft size must be >= 2");
  std::vector<double> real(size);
  std::vector<Complex> spec(size / 2 + 1);
  auto* c = reinterpret_cast<fftw_complex*>(spec.data());
  std::lock_guard lock(planner_mutex());
  forward_plan_ = fftw_plan_dft_r2c_1d(size, real.data(), c, FFTW_ESTIMATE | FFTW_UNALIGNED);
  inverse_plan_ = fftw_plan_dft_c2r_1d(size, c, real.data(),
                                       FFTW_ESTIMATE | FFTW_UNALIGNED | FFTW_DESTROY_INPUT);
  if (!forward_plan_ || !inverse_plan_) throw Error("fftw planning failed");
}

RealFft::~RealFft() {
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(static_cast<fftw_plan>(forward_plan_));
  fftw_destroy_plan(static_cast<fftw_plan>(inverse_plan_));
}

void RealFft::forward(std::span<const double> in, std::span<Complex> out) const {
  // r2c does not modify its input, but the API takes a non-const pointer.
  fftw_execute_dft_r2c(static_cast<fftw_plan>(forward_plan_), const_cast<double*>(in.data()),
                       reinterpret_cast<fftw_complex*>(out.data()));
}

void RealFft::inverse(std::span<const Complex> in, std::span<double> out) const {
  std::vector<Complex> scratch(in.begin(), in.end());
  fftw_execute_dft_c2r(static_cast<fftw_plan>(inverse_plan_),
                       reinterpret_cast<fftw_complex*>(scratch.data()), out.data());
}

std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t n_out = a.size() + b.size() - 1;
  int n = 2;
  while (static_cast<std::size_t>(n) < n_out) n *= 2;
  RealFft fft(n);
  std::vector<double> pa(n, 0.0), pb(n, 0.0);
  std::copy(a.begin(), a.end(), pa.begin());
  std::copy(b.begin(), b.end(), pb.begin());
  std::vector<Complex> fa(fft.bins()), fb(fft.bins());
  fft.forward(pa, fa);
  fft.forward(pb, fb);
  for (int k = 0; k < fft.bins(); ++k) fa[k] *= fb[k] / static_cast<double>(n);
  fft.inverse(fa, pa);
  pa.resize(n_out);
  return pa;
}

}  // namespace doatrack
