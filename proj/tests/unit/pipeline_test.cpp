#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace specinv;

namespace {

AnalysisConfig cfg_of(std::size_t win, std::size_t hop) {
  AnalysisConfig c;
  c.win_len = win;
  c.hop = hop;
  return c;
}

Waveform mixture(std::size_t n) {
  auto w = testutil::chirp(n, 300.0, 2500.0, 0.4);
  const auto t = testutil::tone(n, 1234.0, 0.2);
  const auto z = testutil::noise(n, 9, 0.01);
  for (std::size_t i = 0; i < n; ++i) w.samples[i] += t.samples[i] + z.samples[i];
  return w;
}

std::vector<double> mags(std::span<const cplx> f) {
  std::vector<double> m(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) m[i] = std::abs(f[i]);
  return m;
}

LogMagnitudeSpectrogram first_frames(const LogMagnitudeSpectrogram& m, std::size_t k) {
  LogMagnitudeSpectrogram out = m;
  out.data = FrameMatrix<double>(m.bins(), k);
  for (std::size_t t = 0; t < k; ++t) std::copy_n(m.data.frame(t).begin(), m.bins(), out.data.frame(t).begin());
  out.num_samples = (k - 1) * m.config.hop;
  return out;
}

}  // namespace

TEST(Step, OracleFeaturesReproduceTrueFrames) {
  const auto ref = stft(mixture(4000), cfg_of(256, 64));
  const auto f = oracle_features(ref);
  for (auto scheme : {WeightScheme::Geometric, WeightScheme::SquaredCurrent, WeightScheme::Uniform}) {
    for (std::size_t tau = 1; tau < ref.frames(); tau += 7) {
      auto st = start_stream(mags(ref.data.frame(tau - 1)), InitSpec::oracle(), ref.data.frame(tau - 1));
      const auto cur = mags(ref.data.frame(tau));
      const auto r = step(st, cur, f.fpd.frame(tau).subspan(1), f.bpd.frame(tau), ref.config, {scheme});
      const double peak = *std::max_element(cur.begin(), cur.end());
      for (std::size_t l = 0; l < cur.size(); ++l) {
        if (cur[l] <= 1e-6 * peak) continue;
        EXPECT_LT(std::abs(r.frame[l] - ref.data(l, tau)) / cur[l], 1e-8)
            << to_string(scheme) << " tau=" << tau << " l=" << l;
      }
      EXPECT_LT(r.residual, 1e-10);
      EXPECT_EQ(st.frame_index, 2u);
    }
  }
}

TEST(Step, TimeOnlyWeightsIntegrateAlongTime) {
  const auto cfg = cfg_of(64, 16);
  const std::size_t n = cfg.bins();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-kPi, kPi), m(0.1, 2.0);
  std::vector<double> mag0(n), mag1(n), fpd_hat(n - 1), bpd_hat(n);
  for (auto& v : mag0) v = m(rng);
  for (auto& v : mag1) v = m(rng);
  for (auto& v : fpd_hat) v = u(rng);
  for (auto& v : bpd_hat) v = u(rng);
  auto st = start_stream(mag0, InitSpec::random(5));
  const auto prev = st.prev_frame;
  const auto r = step(st, mag1, fpd_hat, bpd_hat, cfg, {WeightScheme::TimeOnly});
  const auto v_hat = tpd_from_bpd(bpd_hat, cfg.hop, cfg.half());
  for (std::size_t l = 0; l < n; ++l) {
    const double d = std::abs(wrap(std::arg(r.frame[l]) - std::arg(prev[l]) - v_hat[l]));
    EXPECT_LT(d, 1e-9) << l;
  }
}

TEST(Step, FlatMagnitudesAndZeroDifferencesKeepPhaseConstant) {
  const auto cfg = cfg_of(64, 16);
  const std::size_t n = cfg.bins();
  const std::vector<double> flat(n, 1.0), zero_fpd(n - 1, 0.0);
  // zero phase change in time corresponds to BPD = wrap(-a pi w / L)
  const auto bpd_hat = bpd_from_tpd(std::vector<double>(n, 0.0), cfg.hop, cfg.half());
  auto st = start_stream(flat, InitSpec::zeros());
  for (int k = 0; k < 5; ++k) {
    const auto r = step(st, flat, zero_fpd, bpd_hat, cfg);
    for (const auto& z : r.frame) {
      EXPECT_NEAR(std::arg(z), 0.0, 1e-12);
      EXPECT_NEAR(std::abs(z), 1.0, 1e-15);
    }
  }
}

TEST(Step, LengthMismatchRejected) {
  const auto cfg = cfg_of(64, 16);
  auto st = start_stream(std::vector<double>(33, 1.0), InitSpec::zeros());
  EXPECT_THROW(step(st, std::vector<double>(32, 1.0), std::vector<double>(31), std::vector<double>(32), cfg),
               ConfigError);
  EXPECT_THROW(start_stream(std::vector<double>(33, 1.0), InitSpec::oracle()), ConfigError);
}

TEST(Lsc, ClosedForms) {
  const auto w = mixture(3000);
  const auto ref = stft(w, cfg_of(256, 64));
  EXPECT_EQ(lsc(ref, w), kLscFloorDb);
  EXPECT_NEAR(lsc(ref, Waveform{std::vector<double>(3000, 0.0), 16000.0}), 0.0, 1e-12);
  auto half = w;
  for (auto& v : half.samples) v *= 0.5;
  EXPECT_NEAR(lsc(ref, half), 20.0 * std::log10(0.5), 1e-9);
  // shorter estimates are zero-padded
  auto cut = w;
  cut.samples.resize(2000);
  EXPECT_GT(lsc(ref, cut), -20.0);
  const auto silent = stft(Waveform{std::vector<double>(3000, 0.0), 16000.0}, cfg_of(256, 64));
  EXPECT_THROW(lsc(silent, w), std::invalid_argument);
}

// Frozen after measurement: -120 dB (the cap) for this input.
constexpr double kOracleLscDb = -100.0;

TEST(Invert, OracleFeaturesNearlyExact) {
  const auto ref = stft(mixture(16000), cfg_of(512, 128));
  const auto r = invert_oracle(ref, {WeightScheme::Geometric, InitSpec::oracle()});
  EXPECT_LT(r.report.lsc_db, kOracleLscDb);
  EXPECT_EQ(r.report.frames, ref.frames());
  EXPECT_EQ(r.report.residuals.size(), ref.frames() - 1);
  EXPECT_EQ(r.report.mode, "oracle");
  EXPECT_EQ(r.wave.samples.size(), 16000u);
  for (double v : r.report.residuals) EXPECT_GE(v, 0.0);
}

TEST(Invert, InitModesAllComplete) {
  const auto ref = stft(mixture(4000), cfg_of(256, 64));
  const auto z = invert_oracle(ref, {WeightScheme::Geometric, InitSpec::zeros()});
  const auto r = invert_oracle(ref, {WeightScheme::Geometric, InitSpec::random(3)});
  const auto r2 = invert_oracle(ref, {WeightScheme::Geometric, InitSpec::random(3)});
  EXPECT_EQ(z.report.init, "zeros");
  EXPECT_EQ(r.report.init, "random:3");
  EXPECT_EQ(r.estimate.data, r2.estimate.data);
  EXPECT_NE(r.estimate.data, z.estimate.data);
  EXPECT_TRUE(std::isfinite(z.report.lsc_db));
  EXPECT_TRUE(std::isfinite(r.report.lsc_db));

  EXPECT_EQ(InitSpec::parse("random:17").seed, 17u);
  EXPECT_EQ(InitSpec::parse("oracle").mode, InitMode::Oracle);
  EXPECT_THROW(InitSpec::parse("random:"), ConfigError);
  EXPECT_THROW(InitSpec::parse("random:x1"), ConfigError);
  EXPECT_THROW(InitSpec::parse("ones"), ConfigError);
}

TEST(Invert, MagnitudesPreserved) {
  const auto ref = stft(mixture(4000), cfg_of(256, 64));
  const auto lm = log_magnitude(ref);
  const auto w = CnnWeights<double>::he_uniform(CnnMode::Full, 2);
  const auto r = invert(lm, w, {});
  const auto mag = magnitudes_of(lm);
  for (std::size_t i = 0; i < mag.raw().size(); ++i)
    EXPECT_NEAR(std::abs(r.estimate.data.raw()[i]), mag.raw()[i], 1e-12 * mag.raw()[i]);
  EXPECT_EQ(r.report.mode, "full");
}

TEST(Invert, GeometryErrors) {
  const auto ref = stft(mixture(4000), cfg_of(256, 64));
  auto lm = log_magnitude(ref);
  auto f = oracle_features(ref);
  f.bpd = FrameMatrix<double>(f.bpd.bins(), f.bpd.frames() - 1);
  EXPECT_THROW(invert_with_features(lm, f, {}), ConfigError);
  lm.config.win_len = 512;
  EXPECT_THROW(invert(lm, CnnWeights<float>(CnnMode::Full), {}), ConfigError);
}

TEST(Invert, FullModeIsCausalEndToEnd) {
  const auto lm = log_magnitude(stft(mixture(4000), cfg_of(128, 32)));
  const auto w = CnnWeights<double>::he_uniform(CnnMode::Full, 4);
  const auto all = invert(lm, w, {});
  for (std::size_t k : {2u, 9u, 40u}) {
    const auto part = invert(first_frames(lm, k), w, {});
    for (std::size_t t = 0; t + 1 < k; ++t)
      for (std::size_t l = 0; l < lm.bins(); ++l) ASSERT_EQ(part.estimate.data(l, t), all.estimate.data(l, t));
  }
}

namespace {

template <typename T>
void expect_streaming_matches(CnnMode mode, Lookahead la, std::size_t samples) {
  const auto ref = stft(mixture(samples), cfg_of(128, 32));
  const auto lm = log_magnitude(ref);
  const auto w = CnnWeights<double>::he_uniform(mode, 6).template cast<T>();
  const InversionOptions opt{WeightScheme::Geometric, InitSpec::random(1), la};
  const auto batch = invert(lm, w, opt);

  StreamingInverter<T> s(lm.config, w, opt);
  std::vector<std::vector<cplx>> frames;
  for (std::size_t t = 0; t < lm.frames(); ++t)
    for (auto& f : s.push(lm.data.frame(t))) frames.push_back(std::move(f));
  for (auto& f : s.flush()) frames.push_back(std::move(f));

  ASSERT_EQ(frames.size(), lm.frames());
  EXPECT_EQ(s.frames_out(), lm.frames());
  for (std::size_t t = 0; t < frames.size(); ++t)
    for (std::size_t l = 0; l < lm.bins(); ++l)
      ASSERT_EQ(frames[t][l], batch.estimate.data(l, t)) << "t=" << t << " l=" << l;
  EXPECT_EQ(s.residuals(), batch.report.residuals);
}

}  // namespace

TEST(Streaming, BitIdenticalToBatch) {
  // 1200 samples -> 38 frames, 1232 -> 39 frames
  for (std::size_t n : {1200u, 1232u}) {
    expect_streaming_matches<double>(CnnMode::Full, Lookahead::On, n);
    expect_streaming_matches<float>(CnnMode::Full, Lookahead::On, n);
    expect_streaming_matches<double>(CnnMode::Strided, Lookahead::On, n);
    expect_streaming_matches<float>(CnnMode::Strided, Lookahead::On, n);
    expect_streaming_matches<float>(CnnMode::Strided, Lookahead::Off, n);
  }
}

TEST(Streaming, StridedEmitsPairs) {
  const auto cfg = cfg_of(64, 16);
  const auto w = CnnWeights<float>::he_uniform(CnnMode::Strided, 1);
  StreamingInverter<float> s(cfg, w, {});
  const std::vector<double> frame(cfg.bins(), -2.0);
  std::vector<std::size_t> counts;
  for (int t = 0; t < 6; ++t) counts.push_back(s.push(frame).size());
  EXPECT_EQ(counts, (std::vector<std::size_t>{1, 0, 2, 0, 2, 0}));
  EXPECT_EQ(s.flush().size(), 1u);
  EXPECT_THROW(s.push(std::vector<double>(3, 0.0)), ConfigError);

  StreamingInverter<float> off(cfg, w, {WeightScheme::Geometric, InitSpec::zeros(), Lookahead::Off});
  for (int t = 0; t < 5; ++t) EXPECT_EQ(off.push(frame).size(), 1u);
  EXPECT_TRUE(off.flush().empty());
}

TEST(Report, JsonFields) {
  const auto ref = stft(mixture(2000), cfg_of(256, 64));
  const auto r = invert_oracle(ref, {WeightScheme::Geometric, InitSpec::oracle()});
  const auto j = report_json(r.report);
  for (const char* k : {"lsc_db", "frames", "mode", "init", "config", "max_solver_residual"})
    EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_EQ(j["config"]["win_len"], 256);
  EXPECT_EQ(j["config"]["hop"], 64);
  EXPECT_EQ(j["config"]["weights"], "geometric");
  EXPECT_EQ(j["init"], "oracle");
}
