#include <gtest/gtest.h>

#include <fstream>

#include "helpers.hpp"

using namespace specinv;
using testutil::naive_stft_bin;

namespace {

AnalysisConfig hann(std::size_t win, std::size_t hop) {
  AnalysisConfig c;
  c.win_len = win;
  c.hop = hop;
  return c;
}

double interior_error(const Waveform& x, const Waveform& y, std::size_t win) {
  double err = 0.0;
  for (std::size_t i = win; i + win < x.samples.size(); ++i) err = std::max(err, std::abs(x.samples[i] - y.samples[i]));
  return err;
}

}  // namespace

TEST(Window, PeriodicHannPeaksAtCentre) {
  const auto w = make_window(WindowSpec::hann(), 8);
  EXPECT_DOUBLE_EQ(w[0], 0.0);
  EXPECT_DOUBLE_EQ(w[4], 1.0);
  EXPECT_NEAR(w[2], 0.5, 1e-15);
  EXPECT_NEAR(w[6], 0.5, 1e-15);
}

TEST(Window, GaussianMatchesClosedForm) {
  const auto w = make_window(WindowSpec::gaussian(0.25), 16);
  for (std::size_t n = 0; n < 16; ++n) {
    const double t = (static_cast<double>(n) - 8.0) / 16.0;
    EXPECT_NEAR(w[n], std::exp(-kPi * t * t / 0.25), 1e-15);
  }
}

TEST(AnalysisConfig, RejectsBadGeometry) {
  EXPECT_THROW(hann(7, 2).validate(), ConfigError);
  EXPECT_THROW(hann(8, 0).validate(), ConfigError);
  EXPECT_THROW(hann(8, 9).validate(), ConfigError);
  AnalysisConfig g = hann(8, 2);
  g.window = WindowSpec::gaussian(0.0);
  EXPECT_THROW(g.validate(), ConfigError);
  EXPECT_NO_THROW(hann(1024, 256).validate());
}

TEST(AnalysisConfig, NolaViolationDetected) {
  // Periodic Hann is zero at index 0, so hop == win leaves that offset uncovered.
  EXPECT_THROW(hann(8, 8).validate(), ConfigError);
  EXPECT_NEAR(hann(8, 4).nola_margin(), 0.5, 1e-12);
}

TEST(Stft, FrameCountAndShape) {
  const auto s = stft(testutil::noise(1000, 1), hann(64, 16));
  EXPECT_EQ(s.bins(), 33u);
  EXPECT_EQ(s.frames(), 1000u / 16 + 1);
  EXPECT_EQ(s.num_samples, 1000u);
}

TEST(Stft, ImpulseAtFrameCentreIsFlat) {
  Waveform w{std::vector<double>(32, 0.0), 16000.0};
  w.samples[0] = 1.0;
  const auto cfg = hann(8, 4);
  const auto s = stft(w, cfg);
  const double h0 = make_window(cfg.window, 8)[4];
  for (std::size_t k = 0; k < s.bins(); ++k) EXPECT_NEAR(std::abs(s.data(k, 0)), h0, 1e-15);
}

TEST(Stft, SilenceIsZero) {
  const auto s = stft(Waveform{std::vector<double>(300, 0.0), 16000.0}, hann(32, 8));
  for (const auto& v : s.data.raw()) EXPECT_EQ(v, cplx{});
}

TEST(Stft, MatchesNaiveDftOnBinCentredCosine) {
  const auto cfg = hann(1024, 256);
  // bin 40 of a 1024-point DFT at 16 kHz
  const auto w = testutil::tone(4096, 40.0 * 16000.0 / 1024.0, 0.7, 0.3);
  const auto s = stft(w, cfg);
  for (std::size_t tau : {0u, 3u, 8u, 16u}) {
    std::size_t arg_max = 0;
    for (std::size_t k = 0; k < s.bins(); ++k) {
      const cplx ref = naive_stft_bin(w, cfg, tau, k);
      EXPECT_NEAR(std::abs(s.data(k, tau) - ref), 0.0, 1e-9 * (1.0 + std::abs(ref))) << "tau " << tau << " bin " << k;
      if (std::abs(s.data(k, tau)) > std::abs(s.data(arg_max, tau))) arg_max = k;
    }
    EXPECT_EQ(arg_max, 40u);
  }
}

TEST(Stft, MatchesNaiveDftOnNoiseWithOddSizedFft) {
  // 2L = 24 exercises the non-power-of-two transform path
  const auto cfg = hann(24, 6);
  const auto w = testutil::noise(200, 7);
  const auto s = stft(w, cfg);
  for (std::size_t tau = 0; tau < s.frames(); tau += 5)
    for (std::size_t k = 0; k < s.bins(); ++k)
      EXPECT_NEAR(std::abs(s.data(k, tau) - naive_stft_bin(w, cfg, tau, k)), 0.0, 1e-12);
}

TEST(Stft, RejectsEmptyAndNonFinite) {
  EXPECT_THROW(stft(Waveform{}, hann(8, 4)), std::invalid_argument);
  Waveform w{std::vector<double>(10, 0.0), 16000.0};
  w.samples[3] = std::nan("");
  EXPECT_THROW(stft(w, hann(8, 4)), std::invalid_argument);
  EXPECT_THROW(stft(testutil::noise(10, 1), hann(8, 9)), ConfigError);
}

TEST(Istft, RoundtripNoiseToneChirp) {
  const auto cfg = hann(1024, 256);
  for (const auto& x : {testutil::noise(16000, 3), testutil::tone(16000, 440.0), testutil::chirp(16000, 100.0, 6000.0)}) {
    const auto y = istft(stft(x, cfg));
    ASSERT_EQ(y.samples.size(), x.samples.size());
    double peak = 0.0;
    for (double v : x.samples) peak = std::max(peak, std::abs(v));
    EXPECT_LT(interior_error(x, y, 1024), 1e-6 * peak);
  }
}

TEST(Istft, RoundtripGaussianWindow) {
  AnalysisConfig cfg = hann(256, 32);
  cfg.window = WindowSpec::gaussian(0.1);
  const auto x = testutil::noise(4000, 4);
  EXPECT_LT(interior_error(x, istft(stft(x, cfg)), 256), 1e-9);
}

TEST(LogMagnitude, FloorRelativeToPeak) {
  auto x = testutil::tone(2048, 1000.0);
  const auto s = stft(x, hann(256, 64));
  const auto lm = log_magnitude(s);
  double peak = 0.0;
  for (const auto& v : s.data.raw()) peak = std::max(peak, std::abs(v));
  EXPECT_DOUBLE_EQ(lm.floor, kMagnitudeFloor * peak);
  for (double v : lm.data.raw()) EXPECT_GE(v, std::log(lm.floor));
}

TEST(LogMagnitude, SilenceUsesAbsoluteFloor) {
  const auto s = stft(Waveform{std::vector<double>(100, 0.0), 16000.0}, hann(16, 4));
  const auto lm = log_magnitude(s);
  EXPECT_EQ(lm.floor, kMagnitudeFloor);
  for (double v : lm.data.raw()) EXPECT_DOUBLE_EQ(v, std::log(kMagnitudeFloor));
}

TEST(Fft, InverseUndoesForward) {
  for (std::size_t n : {1u, 2u, 8u, 12u, 64u}) {
    Fft f(n);
    std::vector<cplx> x(n), y;
    for (std::size_t i = 0; i < n; ++i) x[i] = {std::sin(1.0 + i), std::cos(0.3 * i)};
    y = x;
    f.forward(y);
    f.inverse(y);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(std::abs(x[i] - y[i]), 0.0, 1e-13);
  }
}

TEST(Wav, Pcm16AndFloatRoundtrip) {
  const auto dir = testutil::temp_dir("wav");
  const auto x = testutil::noise(500, 9, 0.2, 22050.0);
  wav::write(dir / "a.wav", x, wav::SampleFormat::Float32);
  const auto y = wav::read(dir / "a.wav");
  EXPECT_EQ(y.sample_rate, 22050.0);
  ASSERT_EQ(y.samples.size(), x.samples.size());
  for (std::size_t i = 0; i < x.samples.size(); ++i) EXPECT_NEAR(y.samples[i], x.samples[i], 1e-7);

  wav::write(dir / "b.wav", x, wav::SampleFormat::Pcm16);
  const auto z = wav::read(dir / "b.wav");
  for (std::size_t i = 0; i < x.samples.size(); ++i) EXPECT_NEAR(z.samples[i], x.samples[i], 1.0 / 32768.0);
}

TEST(Wav, StereoRejected) {
  const auto dir = testutil::temp_dir("wav_stereo");
  const auto p = dir / "st.wav";
  {
    std::ofstream os(p, std::ios::binary);
    auto u32 = [&os](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&os](std::uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); };
    os.write("RIFF", 4);
    u32(36 + 8);
    os.write("WAVEfmt ", 8);
    u32(16);
    u16(1);
    u16(2);
    u32(16000);
    u32(64000);
    u16(4);
    u16(16);
    os.write("data", 4);
    u32(8);
    for (int i = 0; i < 4; ++i) u16(0);
  }
  try {
    wav::read(p);
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("mono required"), std::string::npos);
  }
}

TEST(Wav, GarbageRejected) {
  const auto dir = testutil::temp_dir("wav_garbage");
  std::ofstream(dir / "g.wav") << "definitely not audio";
  EXPECT_THROW(wav::read(dir / "g.wav"), IoError);
  EXPECT_THROW(wav::read(dir / "missing.wav"), IoError);
}
