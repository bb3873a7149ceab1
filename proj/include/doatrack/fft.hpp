#pragma once

#include <span>
#include <vector>

#include "doatrack/common.hpp"

namespace doatrack {

/// Thin RAII wrapper over an FFTW real-to-complex / complex-to-real plan pair.
/// Plans are created unaligned so `forward`/`inverse` may be called
/// concurrently on arbitrary buffers.
class RealFft {
 public:
  explicit RealFft(int size);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return size_; }
  int bins() const { return size_ / 2 + 1; }

  /// in: size() reals, out: bins() complex. `in` is clobbered-safe (copied).
  void forward(std::span<const double> in, std::span<Complex> out) const;
  /// Unnormalized inverse: out = size() * ifft(in).
  void inverse(std::span<const Complex> in, std::span<double> out) const;

 private:
  int size_;
  void* forward_plan_ = nullptr;
  void* inverse_plan_ = nullptr;
};

/// Linear convolution via FFT; result length a.size() + b.size() - 1.
std::vector<double> fft_convolve(std::span<const double> a, std::span<const double> b);

}  // namespace doatrack
