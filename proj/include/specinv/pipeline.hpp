#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specinv/cnn.hpp"
#include "specinv/phase_features.hpp"
#include "specinv/solver.hpp"
#include "specinv/stft.hpp"

namespace specinv {

enum class InitMode { Zeros, Random, Oracle };

/// How the phase of frame 0 is chosen.
struct InitSpec {
  InitMode mode = InitMode::Zeros;
  std::uint64_t seed = 0;

  static InitSpec zeros() { return {InitMode::Zeros, 0}; }
  static InitSpec random(std::uint64_t seed) { return {InitMode::Random, seed}; }
  static InitSpec oracle() { return {InitMode::Oracle, 0}; }

  std::string describe() const {
    switch (mode) {
      case InitMode::Zeros: return "zeros";
      case InitMode::Random: return "random:" + std::to_string(seed);
      case InitMode::Oracle: return "oracle";
    }
    return "?";
  }

  /// Accepts "zeros", "random:<seed>" or "oracle".
  static InitSpec parse(const std::string& s) {
    if (s == "zeros") return zeros();
    if (s == "oracle") return oracle();
    if (s.starts_with("random:")) {
      const auto tail = s.substr(7);
      if (tail.empty() || tail.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("bad --init value '" + s + "'");
      return random(std::stoull(tail));
    }
    throw ConfigError("bad --init value '" + s + "' (expected zeros, random:<seed> or oracle)");
  }
};

/// Phase-derivative estimates for a whole utterance, bins x frames. Row 0 of
/// fpd and column 0 of bpd are unused.
struct PhaseFeatures {
  FrameMatrix<double> fpd;
  FrameMatrix<double> bpd;
};

/// Features computed from the true phases.
inline PhaseFeatures oracle_features(const ComplexSpectrogram& s) {
  const auto phase = phase_of(s);
  PhaseFeatures f{FrameMatrix<double>(s.bins(), s.frames()), FrameMatrix<double>(s.bins(), s.frames())};
  for (std::size_t tau = 0; tau < s.frames(); ++tau) {
    const auto u = fpd(phase, tau);
    std::copy(u.begin(), u.end(), f.fpd.frame(tau).begin() + 1);
    if (tau == 0) continue;
    const auto b = bpd_from_tpd(tpd(phase, tau), s.config.hop, s.config.half());
    std::copy(b.begin(), b.end(), f.bpd.frame(tau).begin());
  }
  return f;
}

/// Batch CNN inference; outputs are wrapped to [-pi, pi).
template <typename T>
PhaseFeatures cnn_features(const LogMagnitudeSpectrogram& m, const CnnWeights<T>& w,
                           Lookahead lookahead = Lookahead::On) {
  const auto out = forward(to_input_tensor<T>(m.data), w, {BnMode::Infer, lookahead});
  PhaseFeatures f{to_frame_matrix(out.fpd), to_frame_matrix(out.bpd)};
  for (auto& v : f.fpd.raw()) v = wrap(v);
  for (auto& v : f.bpd.raw()) v = wrap(v);
  return f;
}

/// Recursion state of the second stage.
struct StreamState {
  std::vector<cplx> prev_frame;
  std::vector<double> prev_mag;
  std::size_t frame_index = 0;
  InitSpec init;
};

struct StepOptions {
  WeightScheme scheme = WeightScheme::Geometric;
  double regularization = kDefaultRegularization;
};

/// Frame-0 estimate: given magnitudes with zero, random or true phases.
inline std::vector<cplx> initial_frame(std::span<const double> mag, const InitSpec& init,
                                       std::span<const cplx> oracle_frame = {}) {
  std::vector<cplx> out(mag.size());
  switch (init.mode) {
    case InitMode::Zeros:
      for (std::size_t l = 0; l < mag.size(); ++l) out[l] = {mag[l], 0.0};
      break;
    case InitMode::Random: {
      std::uint64_t s = init.seed ^ 0xD1B54A32D192ED03ull;
      for (std::size_t l = 0; l < mag.size(); ++l) {
        std::uint64_t z = (s += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        const double u = static_cast<double>(z >> 11) * 0x1.0p-53;
        out[l] = std::polar(mag[l], kTwoPi * u - kPi);
      }
      break;
    }
    case InitMode::Oracle:
      if (oracle_frame.size() != mag.size()) throw ConfigError("oracle init needs the reference frame 0");
      for (std::size_t l = 0; l < mag.size(); ++l) out[l] = std::polar(mag[l], std::arg(oracle_frame[l]));
      break;
  }
  return out;
}

inline StreamState start_stream(std::span<const double> mag0, const InitSpec& init,
                                std::span<const cplx> oracle_frame = {}) {
  StreamState s;
  s.prev_frame = initial_frame(mag0, init, oracle_frame);
  s.prev_mag.assign(mag0.begin(), mag0.end());
  s.frame_index = 1;
  s.init = init;
  return s;
}

struct StepResult {
  std::vector<cplx> frame;
  /// ||A z - b|| / ||b|| of the solve (0 when b = 0).
  double residual = 0.0;
};

/// One recursion step: features of frame tau -> least-squares solve -> phase
/// of the solution combined with the given magnitudes.
inline StepResult step(StreamState& state, std::span<const double> mag_cur, std::span<const double> fpd_hat,
                       std::span<const double> bpd_hat, const AnalysisConfig& cfg, const StepOptions& opt = {}) {
  if (state.prev_frame.size() != mag_cur.size()) throw ConfigError("step: magnitude length differs from state");
  const auto v_hat = tpd_from_bpd(bpd_hat, cfg.hop, cfg.half());
  const auto ratios = complex_ratios(state.prev_mag, mag_cur, fpd_hat, v_hat);
  const auto weights = make_weights(opt.scheme, state.prev_mag, mag_cur);
  const auto sys = build_system(ratios, state.prev_frame, weights);
  std::vector<cplx> z;
  try {
    z = thomas_solve(sys, opt.regularization);
  } catch (const SolverError& e) {
    throw SolverError(std::string(e.what()) + " (frame " + std::to_string(state.frame_index) + ")");
  }

  StepResult r;
  {
    std::vector<cplx> az(z.size());
    tridiagonal_apply(sys, opt.regularization * sys.max_diag(), z, az);
    double num = 0.0, den = 0.0;
    for (std::size_t l = 0; l < z.size(); ++l) {
      num += std::norm(az[l] - sys.rhs[l]);
      den += std::norm(sys.rhs[l]);
    }
    r.residual = den > 0.0 ? std::sqrt(num / den) : 0.0;
  }
  r.frame.resize(z.size());
  for (std::size_t l = 0; l < z.size(); ++l) r.frame[l] = std::polar(mag_cur[l], std::arg(z[l]));

  state.prev_frame = r.frame;
  state.prev_mag.assign(mag_cur.begin(), mag_cur.end());
  state.frame_index += 1;
  return r;
}

// ---------------------------------------------------------------------------
// Metric

inline constexpr double kLscFloorDb = -120.0;

/// 20 log10(|| |STFT(est)| - |ref| ||_F / || |ref| ||_F), capped below at
/// -120 dB. `est` is zero-padded or truncated to the reference length.
inline double lsc(const FrameMatrix<double>& ref_mag, std::size_t ref_samples, const AnalysisConfig& cfg,
                  const Waveform& est) {
  Waveform e{est.samples, est.sample_rate};
  e.samples.resize(ref_samples, 0.0);
  const auto s = stft(e, cfg);
  if (s.bins() != ref_mag.bins() || s.frames() != ref_mag.frames()) throw ConfigError("lsc: geometry mismatch");
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < ref_mag.raw().size(); ++i) {
    const double r = ref_mag.raw()[i];
    const double d = std::abs(s.data.raw()[i]) - r;
    num += d * d;
    den += r * r;
  }
  if (den == 0.0) throw std::invalid_argument("lsc: zero reference");
  if (num == 0.0) return kLscFloorDb;
  return std::max(kLscFloorDb, 10.0 * std::log10(num / den));
}

inline double lsc(const ComplexSpectrogram& ref, const Waveform& est) {
  FrameMatrix<double> mag(ref.bins(), ref.frames());
  for (std::size_t i = 0; i < mag.raw().size(); ++i) mag.raw()[i] = std::abs(ref.data.raw()[i]);
  return lsc(mag, ref.num_samples, ref.config, est);
}

// ---------------------------------------------------------------------------
// Offline and streaming drivers

struct InversionOptions {
  WeightScheme scheme = WeightScheme::Geometric;
  InitSpec init;
  Lookahead lookahead = Lookahead::On;
  double regularization = kDefaultRegularization;
};

struct InversionReport {
  double lsc_db = 0.0;
  std::size_t frames = 0;
  std::vector<double> residuals;
  std::string mode;
  std::string init;
  AnalysisConfig config;
  WeightScheme scheme = WeightScheme::Geometric;
};

struct InversionResult {
  Waveform wave;
  ComplexSpectrogram estimate;
  InversionReport report;
};

inline FrameMatrix<double> magnitudes_of(const LogMagnitudeSpectrogram& m) {
  FrameMatrix<double> mag = m.data;
  for (auto& v : mag.raw()) v = std::exp(v);
  return mag;
}

/// Runs the recursion over precomputed features. `oracle_frame0` is only
/// read when the init mode is oracle.
inline InversionResult invert_with_features(const LogMagnitudeSpectrogram& m, const PhaseFeatures& f,
                                            const InversionOptions& opt, std::span<const cplx> oracle_frame0 = {},
                                            std::string mode_name = "features") {
  const auto& cfg = m.config;
  cfg.validate();
  if (m.bins() != cfg.bins()) throw ConfigError("invert: bin count does not match the analysis config");
  if (f.fpd.bins() != m.bins() || f.fpd.frames() != m.frames() || f.bpd.bins() != m.bins() ||
      f.bpd.frames() != m.frames())
    throw ConfigError("invert: feature geometry differs from the spectrogram");
  if (m.frames() == 0) throw ConfigError("invert: empty spectrogram");

  const auto mag = magnitudes_of(m);
  InversionResult res;
  res.estimate = {cfg, m.num_samples, FrameMatrix<cplx>(m.bins(), m.frames())};
  StreamState st = start_stream(mag.frame(0), opt.init, oracle_frame0);
  std::copy(st.prev_frame.begin(), st.prev_frame.end(), res.estimate.data.frame(0).begin());
  const StepOptions so{opt.scheme, opt.regularization};
  for (std::size_t tau = 1; tau < m.frames(); ++tau) {
    auto r = step(st, mag.frame(tau), f.fpd.frame(tau).subspan(1), f.bpd.frame(tau), cfg, so);
    std::copy(r.frame.begin(), r.frame.end(), res.estimate.data.frame(tau).begin());
    res.report.residuals.push_back(r.residual);
  }
  res.wave = istft(res.estimate);
  res.report.lsc_db = lsc(mag, m.num_samples, cfg, res.wave);
  res.report.frames = m.frames();
  res.report.mode = std::move(mode_name);
  res.report.init = opt.init.describe();
  res.report.config = cfg;
  res.report.scheme = opt.scheme;
  return res;
}

/// Oracle-feature inversion: features from the reference phases, magnitudes
/// from its log-magnitude.
inline InversionResult invert_oracle(const ComplexSpectrogram& ref, const InversionOptions& opt) {
  return invert_with_features(log_magnitude(ref), oracle_features(ref), opt, ref.data.frame(0), "oracle");
}

template <typename T>
InversionResult invert(const LogMagnitudeSpectrogram& m, const CnnWeights<T>& w, const InversionOptions& opt,
                       std::span<const cplx> oracle_frame0 = {}) {
  std::string mode = to_string(w.mode());
  if (w.mode() == CnnMode::Strided && opt.lookahead == Lookahead::Off) mode += "-nolookahead";
  return invert_with_features(m, cnn_features(m, w, opt.lookahead), opt, oracle_frame0, mode);
}

/// Frame-by-frame inversion. Each push() consumes one log-magnitude frame and
/// returns the frames completed by it: one in full mode, and in strided mode
/// with look-ahead either none (odd frame, waiting) or two (the pair).
/// Output is bit-identical to invert() on the same input.
template <typename T>
class StreamingInverter {
 public:
  StreamingInverter(AnalysisConfig cfg, const CnnWeights<T>& w, InversionOptions opt,
                    std::vector<cplx> oracle_frame0 = {})
      : cfg_(std::move(cfg)), w_(w), opt_(opt), oracle0_(std::move(oracle_frame0)) {
    cfg_.validate();
  }

  std::vector<std::vector<cplx>> push(std::span<const double> log_mag) {
    if (log_mag.size() != cfg_.bins()) throw ConfigError("stream: frame length differs from the bin count");
    const std::size_t t = frames_in_++;
    window_.emplace_back(log_mag.begin(), log_mag.end());
    if (window_.size() > kStemKernelTime) window_.pop_front();
    std::vector<double> mag(log_mag.size());
    for (std::size_t l = 0; l < mag.size(); ++l) mag[l] = std::exp(log_mag[l]);

    std::vector<std::vector<cplx>> out;
    if (w_.mode() == CnnMode::Full) {
      const auto col = infer_last();
      emit(t, mag, col, 0, out);
      return out;
    }
    if (t % 2 == 0) {
      const auto col = infer_last();
      if (t > 0 && opt_.lookahead == Lookahead::On) emit(t - 1, pending_mag_, col, 0, out);
      emit(t, mag, col, 1, out);
      last_step_ = col;
    } else if (opt_.lookahead == Lookahead::On) {
      pending_mag_ = std::move(mag);
    } else {
      emit(t, mag, last_step_, 1, out);
    }
    return out;
  }

  /// Completes a trailing odd frame in strided look-ahead mode by repeating it.
  std::vector<std::vector<cplx>> flush() {
    std::vector<std::vector<cplx>> out;
    if (w_.mode() != CnnMode::Strided || opt_.lookahead != Lookahead::On || frames_in_ % 2 == 1 ||
        frames_in_ == 0)
      return out;
    window_.push_back(window_.back());
    if (window_.size() > kStemKernelTime) window_.pop_front();
    const auto col = infer_last();
    emit(frames_in_ - 1, pending_mag_, col, 0, out);
    return out;
  }

  const std::vector<double>& residuals() const noexcept { return residuals_; }
  std::size_t frames_out() const noexcept { return frames_out_; }

 private:
  struct Column {
    std::vector<double> fpd, bpd;  // channels x F, channel-major
  };

  Column infer_last() const {
    Tensor<T> x(1, 1, cfg_.bins(), window_.size());
    for (std::size_t t = 0; t < window_.size(); ++t)
      for (std::size_t f = 0; f < cfg_.bins(); ++f) x.at(0, 0, f, t) = static_cast<T>(window_[t][f]);
    const auto raw = forward_layers<T>(x, w_, 1, BnMode::Infer, nullptr, 1);
    Column c;
    for (std::size_t ch = 0; ch < raw.fpd.channels; ++ch)
      for (std::size_t f = 0; f < cfg_.bins(); ++f) {
        c.fpd.push_back(wrap(static_cast<double>(raw.fpd.at(0, ch, f, 0))));
        c.bpd.push_back(wrap(static_cast<double>(raw.bpd.at(0, ch, f, 0))));
      }
    return c;
  }

  void emit(std::size_t t, const std::vector<double>& mag, const Column& c, std::size_t ch,
            std::vector<std::vector<cplx>>& out) {
    const std::size_t F = cfg_.bins();
    if (t == 0) {
      state_ = start_stream(mag, opt_.init, oracle0_);
      out.push_back(state_.prev_frame);
    } else {
      const std::span<const double> fpd(c.fpd.data() + ch * F, F);
      const std::span<const double> bpd(c.bpd.data() + ch * F, F);
      auto r = step(state_, mag, fpd.subspan(1), bpd, cfg_, {opt_.scheme, opt_.regularization});
      residuals_.push_back(r.residual);
      out.push_back(std::move(r.frame));
    }
    ++frames_out_;
  }

  AnalysisConfig cfg_;
  const CnnWeights<T>& w_;
  InversionOptions opt_;
  std::vector<cplx> oracle0_;
  std::deque<std::vector<double>> window_;
  std::size_t frames_in_ = 0;
  std::size_t frames_out_ = 0;
  std::vector<double> pending_mag_;
  Column last_step_;
  StreamState state_;
  std::vector<double> residuals_;
};

inline nlohmann::json config_json(const AnalysisConfig& c) {
  return {{"win_len", c.win_len},
          {"hop", c.hop},
          {"window", c.window.describe()},
          {"sample_rate", c.sample_rate}};
}

inline nlohmann::json report_json(const InversionReport& r) {
  double worst = 0.0;
  for (double v : r.residuals) worst = std::max(worst, v);
  auto cfg = config_json(r.config);
  cfg["weights"] = to_string(r.scheme);
  return {{"lsc_db", r.lsc_db},
          {"frames", r.frames},
          {"mode", r.mode},
          {"init", r.init},
          {"config", cfg},
          {"max_solver_residual", worst}};
}

}  // namespace specinv
