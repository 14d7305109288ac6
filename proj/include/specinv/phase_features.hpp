#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "specinv/common.hpp"
#include "specinv/stft.hpp"

namespace specinv {

/// Maps x into [-pi, pi). wrap(pi) == -pi.
inline double wrap(double x) noexcept {
  double r = x - kTwoPi * std::floor((x + kPi) / kTwoPi);
  if (r >= kPi) r -= kTwoPi;
  if (r < -kPi) r += kTwoPi;
  return r;
}

/// Phase matrix Arg(Y), bins x frames, every entry in [-pi, pi).
using PhaseMatrix = FrameMatrix<double>;

inline PhaseMatrix phase_of(const ComplexSpectrogram& s) {
  PhaseMatrix p(s.bins(), s.frames());
  for (std::size_t i = 0; i < p.raw().size(); ++i) p.raw()[i] = wrap(std::arg(s.data.raw()[i]));
  return p;
}

/// Frequency phase difference of frame tau: out[w-1] = wrap(P[w] - P[w-1]), w = 1..L.
inline std::vector<double> fpd(const PhaseMatrix& phase, std::size_t tau) {
  if (tau >= phase.frames()) throw std::out_of_range("fpd: frame index out of range");
  auto col = phase.frame(tau);
  std::vector<double> out(col.size() - 1);
  for (std::size_t w = 1; w < col.size(); ++w) out[w - 1] = wrap(col[w] - col[w - 1]);
  return out;
}

/// Time phase difference between frames tau and tau-1, one entry per bin.
inline std::vector<double> tpd(const PhaseMatrix& phase, std::size_t tau) {
  if (tau == 0) throw std::out_of_range("tpd: undefined for frame 0");
  if (tau >= phase.frames()) throw std::out_of_range("tpd: frame index out of range");
  auto cur = phase.frame(tau);
  auto prev = phase.frame(tau - 1);
  std::vector<double> out(cur.size());
  for (std::size_t w = 0; w < cur.size(); ++w) out[w] = wrap(cur[w] - prev[w]);
  return out;
}

/// Baseband phase difference: removes the hop-induced linear phase a*pi*w/L.
inline std::vector<double> bpd_from_tpd(std::span<const double> v, std::size_t hop, std::size_t half) {
  std::vector<double> out(v.size());
  const double a = static_cast<double>(hop);
  const double L = static_cast<double>(half);
  for (std::size_t w = 0; w < v.size(); ++w) out[w] = wrap(v[w] - a * kPi * static_cast<double>(w) / L);
  return out;
}

inline std::vector<double> tpd_from_bpd(std::span<const double> bpd, std::size_t hop, std::size_t half) {
  std::vector<double> out(bpd.size());
  const double a = static_cast<double>(hop);
  const double L = static_cast<double>(half);
  for (std::size_t w = 0; w < bpd.size(); ++w) out[w] = wrap(bpd[w] + a * kPi * static_cast<double>(w) / L);
  return out;
}

/// Per-frame complex ratios relating a frame to its lower-frequency neighbour
/// (u, length L) and to the previous frame (v, length L+1).
struct ComplexRatios {
  std::vector<cplx> u;
  std::vector<cplx> v;
};

inline ComplexRatios complex_ratios(std::span<const double> mag_prev, std::span<const double> mag_cur,
                                    std::span<const double> fpd_hat, std::span<const double> tpd_hat) {
  const std::size_t n = mag_cur.size();
  if (n == 0 || mag_prev.size() != n || fpd_hat.size() + 1 != n || tpd_hat.size() != n)
    throw ConfigError("complex_ratios: length mismatch");
  ComplexRatios r{std::vector<cplx>(n - 1), std::vector<cplx>(n)};
  for (std::size_t l = 0; l + 1 < n; ++l) r.u[l] = std::polar(mag_cur[l + 1] / mag_cur[l], fpd_hat[l]);
  for (std::size_t l = 0; l < n; ++l) r.v[l] = std::polar(mag_cur[l] / mag_prev[l], tpd_hat[l]);
  return r;
}

struct GradientTheoremResidual {
  /// Median |dPhi/dw + lambda dlogM/dt|, radians per bin.
  double freq = 0.0;
  /// Median |dPhi/dt - 2 pi w - (1/lambda) dlogM/dw| scaled to one hop, radians.
  double time = 0.0;
  std::size_t points = 0;
};

/// Compares central-difference phase derivatives of a Gaussian-windowed STFT
/// with the log-magnitude derivatives predicted by the gradient theorem.
/// Time is measured in window lengths (t = n / 2L) and frequency in bins, so
/// lambda is the same dimensionless width used by make_window.
inline GradientTheoremResidual gradient_theorem_residual(const Waveform& wave, const AnalysisConfig& cfg) {
  if (cfg.window.kind != WindowKind::Gaussian || std::isinf(cfg.window.lambda))
    throw ConfigError("gradient_theorem_residual: requires a finite Gaussian window");
  const auto spec = stft(wave, cfg);
  const double lambda = cfg.window.lambda;
  const double dt = static_cast<double>(cfg.hop) / static_cast<double>(cfg.win_len);

  double peak = 0.0;
  for (const auto& y : spec.data.raw()) peak = std::max(peak, std::abs(y));
  const double threshold = 1e-3 * peak;

  const auto phase = phase_of(spec);
  FrameMatrix<double> logm(spec.bins(), spec.frames());
  for (std::size_t i = 0; i < logm.raw().size(); ++i)
    logm.raw()[i] = std::log(std::max(std::abs(spec.data.raw()[i]), kMagnitudeFloor * std::max(peak, 1.0)));

  std::vector<double> res_f, res_t;
  for (std::size_t tau = 1; tau + 1 < spec.frames(); ++tau) {
    for (std::size_t w = 1; w + 1 < spec.bins(); ++w) {
      if (!(std::abs(spec.data(w, tau)) > threshold)) continue;
      const double wd = static_cast<double>(w);
      const double dphi_dw = wrap(phase(w + 1, tau) - phase(w - 1, tau)) / 2.0;
      const double dlogm_dt = (logm(w, tau + 1) - logm(w, tau - 1)) / (2.0 * dt);
      res_f.push_back(std::abs(dphi_dw + lambda * dlogm_dt));

      const double advance = kTwoPi * wd * 2.0 * dt;
      const double dphi_step = wrap(phase(w, tau + 1) - phase(w, tau - 1) - advance) / 2.0;
      const double dlogm_dw = (logm(w + 1, tau) - logm(w - 1, tau)) / 2.0;
      res_t.push_back(std::abs(dphi_step - dt * dlogm_dw / lambda));
    }
  }
  if (res_f.empty()) throw std::invalid_argument("gradient_theorem_residual: no bins above threshold");

  auto median = [](std::vector<double>& v) {
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
  };
  const std::size_t count = res_f.size();
  return {median(res_f), median(res_t), count};
}

}  // namespace specinv
