#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "specinv/common.hpp"
#include "specinv/fft.hpp"

namespace specinv {

/// Relative magnitude floor: |Y| is clamped to kMagnitudeFloor * max|Y|.
inline constexpr double kMagnitudeFloor = 1e-10;

enum class WindowKind { Hann, Gaussian };

struct WindowSpec {
  WindowKind kind = WindowKind::Hann;
  /// Gaussian width; +inf gives the rectangular limit.
  double lambda = 0.0;

  static WindowSpec hann() { return {WindowKind::Hann, 0.0}; }
  static WindowSpec gaussian(double lambda) { return {WindowKind::Gaussian, lambda}; }

  std::string describe() const {
    if (kind == WindowKind::Hann) return "hann";
    return "gaussian:" + std::to_string(lambda);
  }
};

/// Window of length win_len = 2L. Element n corresponds to frame offset
/// l = n - L, so the window peak sits at index L.
///
/// Hann is the periodic Hann window. Gaussian evaluates exp(-pi t^2 / lambda)
/// on the normalized time axis t = l / (2L).
inline std::vector<double> make_window(const WindowSpec& spec, std::size_t win_len) {
  require(win_len > 0 && win_len % 2 == 0, "make_window: win_len must be positive and even");
  std::vector<double> w(win_len);
  const auto half = static_cast<double>(win_len / 2);
  const auto len = static_cast<double>(win_len);
  for (std::size_t n = 0; n < win_len; ++n) {
    const double l = static_cast<double>(n) - half;
    if (spec.kind == WindowKind::Hann) {
      w[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / len);
    } else if (std::isinf(spec.lambda)) {
      w[n] = 1.0;
    } else {
      const double t = l / len;
      w[n] = std::exp(-kPi * t * t / spec.lambda);
    }
  }
  return w;
}

struct AnalysisConfig {
  std::size_t win_len = 1024;
  std::size_t hop = 256;
  WindowSpec window = WindowSpec::hann();
  double sample_rate = 16000.0;

  std::size_t half() const noexcept { return win_len / 2; }
  std::size_t bins() const noexcept { return win_len / 2 + 1; }
  double frames_per_second() const noexcept { return sample_rate / static_cast<double>(hop); }

  /// Throws ConfigError on invalid geometry or when the window violates NOLA.
  void validate() const {
    if (win_len == 0 || win_len % 2 != 0) throw ConfigError("win_len must be positive and even");
    if (hop == 0 || hop > win_len) throw ConfigError("hop must satisfy 0 < hop <= win_len");
    if (!(sample_rate > 0.0)) throw ConfigError("sample_rate must be positive");
    if (window.kind == WindowKind::Gaussian && !(window.lambda > 0.0))
      throw ConfigError("gaussian window requires lambda > 0");
    if (nola_margin() <= 1e-8) throw ConfigError("window/hop pair violates the NOLA condition");
  }

  /// min over sample offsets of sum_k h^2[r + k*hop], relative to max h^2.
  double nola_margin() const {
    const auto w = make_window(window, win_len);
    double peak = 0.0;
    for (double v : w) peak = std::max(peak, v * v);
    if (peak == 0.0) return 0.0;
    double worst = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < hop; ++r) {
      double s = 0.0;
      for (std::size_t n = r; n < win_len; n += hop) s += w[n] * w[n];
      worst = std::min(worst, s);
    }
    return worst / peak;
  }

  bool operator==(const AnalysisConfig& o) const {
    return win_len == o.win_len && hop == o.hop && window.kind == o.window.kind &&
           window.lambda == o.window.lambda && sample_rate == o.sample_rate;
  }
};

struct Waveform {
  std::vector<double> samples;
  double sample_rate = 16000.0;
};

/// One-sided STFT: bins = L + 1 rows, one column per frame.
struct ComplexSpectrogram {
  AnalysisConfig config;
  std::size_t num_samples = 0;
  FrameMatrix<cplx> data;

  std::size_t bins() const noexcept { return data.bins(); }
  std::size_t frames() const noexcept { return data.frames(); }
};

struct LogMagnitudeSpectrogram {
  AnalysisConfig config;
  std::size_t num_samples = 0;
  FrameMatrix<double> data;
  /// Absolute floor applied before the log.
  double floor = 0.0;

  std::size_t bins() const noexcept { return data.bins(); }
  std::size_t frames() const noexcept { return data.frames(); }
};

inline std::size_t frame_count(std::size_t num_samples, std::size_t hop) { return num_samples / hop + 1; }

/// Frame tau analyzes y[a*tau + l] h[l] for l in [-L, L); samples outside the
/// signal read as zero.
inline ComplexSpectrogram stft(const Waveform& w, const AnalysisConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw std::invalid_argument("stft: empty waveform");
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw std::invalid_argument("stft: non-finite sample");
  }
  const std::size_t n_fft = cfg.win_len;
  const std::size_t L = cfg.half();
  const std::size_t frames = frame_count(w.samples.size(), cfg.hop);
  const auto window = make_window(cfg.window, n_fft);
  const Fft fft(n_fft);

  ComplexSpectrogram out{cfg, w.samples.size(), FrameMatrix<cplx>(cfg.bins(), frames)};
  std::vector<cplx> buf(n_fft);
  const auto n_samples = static_cast<std::ptrdiff_t>(w.samples.size());
  for (std::size_t tau = 0; tau < frames; ++tau) {
    const auto center = static_cast<std::ptrdiff_t>(tau * cfg.hop);
    for (std::size_t n = 0; n < n_fft; ++n) {
      const std::ptrdiff_t idx = center + static_cast<std::ptrdiff_t>(n) - static_cast<std::ptrdiff_t>(L);
      const double y = (idx >= 0 && idx < n_samples) ? w.samples[static_cast<std::size_t>(idx)] : 0.0;
      buf[n] = {y * window[n], 0.0};
    }
    fft.forward(buf);
    // Buffer index n maps to l = n - L, which contributes a (-1)^omega factor.
    auto col = out.data.frame(tau);
    for (std::size_t k = 0; k <= L; ++k) col[k] = (k % 2 == 0) ? buf[k] : -buf[k];
  }
  return out;
}

/// Weighted overlap-add inverse with window-squared normalization.
inline Waveform istft(const ComplexSpectrogram& s) {
  const auto& cfg = s.config;
  cfg.validate();
  const std::size_t n_fft = cfg.win_len;
  const std::size_t L = cfg.half();
  if (s.bins() != cfg.bins()) throw ConfigError("istft: bin count does not match win_len");
  const std::size_t num_samples = s.num_samples > 0 ? s.num_samples : (s.frames() - 1) * cfg.hop + 1;

  const auto window = make_window(cfg.window, n_fft);
  const Fft fft(n_fft);
  std::vector<double> acc(num_samples, 0.0);
  std::vector<double> norm(num_samples, 0.0);
  std::vector<cplx> buf(n_fft);
  const auto n_out = static_cast<std::ptrdiff_t>(num_samples);

  for (std::size_t tau = 0; tau < s.frames(); ++tau) {
    auto col = s.data.frame(tau);
    for (std::size_t k = 0; k <= L; ++k) buf[k] = (k % 2 == 0) ? col[k] : -col[k];
    for (std::size_t k = L + 1; k < n_fft; ++k) buf[k] = std::conj(buf[n_fft - k]);
    fft.inverse(buf);
    const auto center = static_cast<std::ptrdiff_t>(tau * cfg.hop);
    for (std::size_t n = 0; n < n_fft; ++n) {
      const std::ptrdiff_t idx = center + static_cast<std::ptrdiff_t>(n) - static_cast<std::ptrdiff_t>(L);
      if (idx < 0 || idx >= n_out) continue;
      const auto i = static_cast<std::size_t>(idx);
      acc[i] += window[n] * buf[n].real();
      norm[i] += window[n] * window[n];
    }
  }
  Waveform out{std::vector<double>(num_samples, 0.0), cfg.sample_rate};
  for (std::size_t i = 0; i < num_samples; ++i) {
    if (norm[i] > 1e-12) out.samples[i] = acc[i] / norm[i];
  }
  return out;
}

/// Floor used for a spectrogram: kMagnitudeFloor * max|Y|, or kMagnitudeFloor
/// itself when the spectrogram is identically zero.
inline double magnitude_floor(const ComplexSpectrogram& s) {
  double peak = 0.0;
  for (const auto& v : s.data.raw()) peak = std::max(peak, std::abs(v));
  return peak > 0.0 ? kMagnitudeFloor * peak : kMagnitudeFloor;
}

inline FrameMatrix<double> floored_magnitude(const ComplexSpectrogram& s) {
  const double floor = magnitude_floor(s);
  FrameMatrix<double> m(s.bins(), s.frames());
  for (std::size_t i = 0; i < m.raw().size(); ++i) m.raw()[i] = std::max(std::abs(s.data.raw()[i]), floor);
  return m;
}

inline LogMagnitudeSpectrogram log_magnitude(const ComplexSpectrogram& s) {
  LogMagnitudeSpectrogram out{s.config, s.num_samples, floored_magnitude(s), magnitude_floor(s)};
  for (auto& v : out.data.raw()) v = std::log(v);
  return out;
}

}  // namespace specinv
