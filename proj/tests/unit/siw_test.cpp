#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace specinv;

namespace {

std::vector<char> image(const CnnWeights<float>& w) {
  std::ostringstream os;
  siw::write(os, w);
  const auto s = os.str();
  return {s.begin(), s.end()};
}

// Byte offset of the first tensor record (after magic, version, mode, count).
constexpr std::size_t kFirstTensor = 4 + 4 + 1 + 4;

}  // namespace

TEST(Siw, RoundtripIsBitExact) {
  for (auto mode : {CnnMode::Full, CnnMode::Strided}) {
    const auto w = CnnWeights<double>::he_uniform(mode, 3).cast<float>();
    const auto back = siw::parse<float>(image(w));
    EXPECT_EQ(back.mode(), mode);
    for (std::size_t i = 0; i < w.tensors().size(); ++i) {
      EXPECT_EQ(back[i].name, w[i].name);
      EXPECT_EQ(back[i].values, w[i].values);
    }
  }
}

TEST(Siw, HeaderLayout) {
  const auto bytes = image(CnnWeights<float>(CnnMode::Strided));
  EXPECT_EQ(std::string(bytes.data(), 4), "SIW1");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 1);  // mode byte
  EXPECT_EQ(static_cast<unsigned char>(bytes[9]), slots::kCount);
  // first name: u16 length then "bn_in.weight"
  EXPECT_EQ(bytes[kFirstTensor], 12);
  EXPECT_EQ(std::string(bytes.data() + kFirstTensor + 2, 12), "bn_in.weight");
}

TEST(Siw, FileRoundtrip) {
  const auto dir = testutil::temp_dir("siw");
  const auto w = CnnWeights<double>::he_uniform(CnnMode::Full, 4);
  siw::save(dir / "w.siw", w);
  const auto back = siw::load<double>(dir / "w.siw");
  for (std::size_t i = 0; i < w.tensors().size(); ++i)
    for (std::size_t k = 0; k < w[i].values.size(); ++k)
      EXPECT_EQ(back[i].values[k], static_cast<double>(static_cast<float>(w[i].values[k])));
  EXPECT_THROW(siw::load<float>(dir / "missing.siw"), IoError);
}

TEST(Siw, Rejections) {
  const auto good = image(CnnWeights<float>(CnnMode::Full));
  auto expect_reject = [](std::vector<char> b, const char* what) {
    EXPECT_THROW(siw::parse<float>(std::move(b)), IoError) << what;
  };

  auto b = good;
  b[0] = 'X';
  expect_reject(b, "magic");
  b = good;
  b[4] = 2;
  expect_reject(b, "version");
  b = good;
  b[8] = 7;
  expect_reject(b, "mode");
  b = good;
  b[9] = 49;
  expect_reject(b, "count");
  b = good;
  b[kFirstTensor + 2] = 'X';
  expect_reject(b, "name");
  b = good;
  b[kFirstTensor + 2 + 12] = 2;
  expect_reject(b, "rank");
  b = good;
  b.push_back(0);
  expect_reject(b, "trailing");
  b = good;
  b.resize(b.size() - 3);
  expect_reject(b, "truncated");

  auto w = CnnWeights<float>(CnnMode::Full);
  w[slots::kBnIn.var].values[0] = 0.0f;
  expect_reject(image(w), "running var");
  w = CnnWeights<float>(CnnMode::Full);
  w[slots::kStemConv.weight].values[3] = std::numeric_limits<float>::quiet_NaN();
  expect_reject(image(w), "nan");

  // a strided header with full-mode output dims
  b = good;
  b[8] = 1;
  expect_reject(b, "dims");
}
