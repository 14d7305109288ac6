#pragma once

#include <span>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "specinv/common.hpp"

namespace specinv {

// Fixed-size complex DFT on top of Eigen's FFT module. Eigen keeps plans and
// scratch space inside the FFT object, so each thread gets its own; an Fft is
// then safe to share.
class Fft {
 public:
  explicit Fft(std::size_t n) : n_(n) { require(n > 0, "Fft: size must be positive"); }

  std::size_t size() const noexcept { return n_; }

  /// X[k] = sum_n x[n] e^{-2 pi i k n / N}
  void forward(std::span<cplx> x) const { transform(x, false); }

  /// x[n] = (1/N) sum_k X[k] e^{+2 pi i k n / N}
  void inverse(std::span<cplx> x) const { transform(x, true); }

 private:
  void transform(std::span<cplx> x, bool inv) const {
    require(x.size() == n_, "Fft: buffer size mismatch");
    if (n_ == 1) return;  // identity; kissfft has no stage for it
    thread_local Eigen::FFT<double> engine;
    thread_local std::vector<cplx> out;
    out.resize(n_);
    const auto n = static_cast<int>(n_);
    if (inv)
      engine.inv(out.data(), x.data(), n);  // scaled by 1/N
    else
      engine.fwd(out.data(), x.data(), n);
    std::copy(out.begin(), out.end(), x.begin());
  }

  std::size_t n_;
};

}  // namespace specinv
