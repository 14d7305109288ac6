#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "specinv/specinv.hpp"

namespace testutil {

using specinv::cplx;
using specinv::Waveform;

inline Waveform noise(std::size_t n, std::uint64_t seed, double scale = 0.3, double rate = 16000.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Waveform w{std::vector<double>(n), rate};
  for (auto& s : w.samples) s = g(rng);
  return w;
}

inline Waveform tone(std::size_t n, double freq_hz, double amp = 0.5, double phase = 0.0, double rate = 16000.0) {
  Waveform w{std::vector<double>(n), rate};
  for (std::size_t i = 0; i < n; ++i)
    w.samples[i] = amp * std::cos(2.0 * specinv::kPi * freq_hz * static_cast<double>(i) / rate + phase);
  return w;
}

/// Linear chirp from f0 to f1 over the signal.
inline Waveform chirp(std::size_t n, double f0, double f1, double amp = 0.5, double rate = 16000.0) {
  Waveform w{std::vector<double>(n), rate};
  const double dur = static_cast<double>(n) / rate;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    w.samples[i] = amp * std::sin(2.0 * specinv::kPi * (f0 * t + 0.5 * (f1 - f0) / dur * t * t));
  }
  return w;
}

/// Tone whose frequency swings sinusoidally: f0 + dev sin(2 pi mod_hz t).
inline Waveform fm_tone(std::size_t n, double f0, double dev, double mod_hz, double amp = 0.5, double rate = 16000.0) {
  Waveform w{std::vector<double>(n), rate};
  double ph = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate;
    ph += 2.0 * specinv::kPi * (f0 + dev * std::sin(2.0 * specinv::kPi * mod_hz * t)) / rate;
    w.samples[i] = amp * std::cos(ph);
  }
  return w;
}

/// Direct evaluation of the frame-centred STFT definition, O(N^2) per frame.
inline cplx naive_stft_bin(const Waveform& w, const specinv::AnalysisConfig& cfg, std::size_t tau,
                           std::size_t omega) {
  const auto win = specinv::make_window(cfg.window, cfg.win_len);
  const auto L = static_cast<std::ptrdiff_t>(cfg.half());
  cplx acc{};
  for (std::ptrdiff_t l = -L; l < L; ++l) {
    const std::ptrdiff_t idx = static_cast<std::ptrdiff_t>(tau * cfg.hop) + l;
    if (idx < 0 || idx >= static_cast<std::ptrdiff_t>(w.samples.size())) continue;
    const double ang = -specinv::kPi * static_cast<double>(omega) * static_cast<double>(l) / static_cast<double>(L);
    acc += w.samples[static_cast<std::size_t>(idx)] * win[static_cast<std::size_t>(l + L)] * std::polar(1.0, ang);
  }
  return acc;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("specinv_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
