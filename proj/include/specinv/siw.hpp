#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "specinv/cnn.hpp"
#include "specinv/common.hpp"

// SIW1 weights container:
//   "SIW1" | u32 version (1) | u8 mode (0 full, 1 strided) | u32 tensor_count
//   per tensor: u16 name_len | name (UTF-8) | u8 rank | rank x u32 dims |
//               prod(dims) x f32 values, row-major
// All integers and floats little-endian.
namespace specinv::siw {

inline constexpr char kMagic[4] = {'S', 'I', 'W', '1'};
inline constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "SIW1 codec assumes a little-endian host");

namespace detail {

class Reader {
 public:
  explicit Reader(std::vector<char> buf) : buf_(std::move(buf)) {}

  template <typename U>
  U get() {
    if (pos_ + sizeof(U) > buf_.size()) throw IoError("siw: truncated file");
    U v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) throw IoError("siw: truncated file");
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

}  // namespace detail

template <typename T>
void write(std::ostream& os, const CnnWeights<T>& w) {
  os.write(kMagic, 4);
  detail::put<std::uint32_t>(os, kVersion);
  detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(w.mode()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(w.tensors().size()));
  for (const auto& t : w.tensors()) {
    detail::put<std::uint16_t>(os, static_cast<std::uint16_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put<std::uint8_t>(os, static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) detail::put<std::uint32_t>(os, d);
    for (const auto& v : t.values) detail::put<float>(os, static_cast<float>(v));
  }
}

template <typename T>
void save(const std::filesystem::path& path, const CnnWeights<T>& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("siw: cannot write " + path.string());
  write(os, w);
  if (!os) throw IoError("siw: write failed: " + path.string());
}

/// Parses a SIW1 image. Rejects unknown versions or modes, tensors whose
/// name, rank or dims differ from the fixed layout, wrong tensor counts,
/// trailing bytes, non-finite values and non-positive running variances.
template <typename T>
CnnWeights<T> parse(std::vector<char> bytes) {
  detail::Reader r(std::move(bytes));
  if (r.bytes(4) != std::string(kMagic, 4)) throw IoError("siw: bad magic");
  if (r.get<std::uint32_t>() != kVersion) throw IoError("siw: unsupported version");
  const auto mode_byte = r.get<std::uint8_t>();
  if (mode_byte > 1) throw IoError("siw: unknown mode " + std::to_string(mode_byte));
  CnnWeights<T> w(static_cast<CnnMode>(mode_byte));
  const auto count = r.get<std::uint32_t>();
  if (count != w.tensors().size())
    throw IoError("siw: expected " + std::to_string(w.tensors().size()) + " tensors, found " + std::to_string(count));
  for (auto& t : w.tensors()) {
    const auto name = r.bytes(r.get<std::uint16_t>());
    if (name != t.name) throw IoError("siw: unexpected tensor '" + name + "' (expected '" + t.name + "')");
    const auto rank = r.get<std::uint8_t>();
    if (rank != t.dims.size()) throw IoError("siw: wrong rank for " + name);
    for (auto expected : t.dims) {
      if (r.get<std::uint32_t>() != expected) throw IoError("siw: wrong dims for " + name);
    }
    for (auto& v : t.values) {
      const float f = r.get<float>();
      if (!std::isfinite(f)) throw IoError("siw: non-finite value in " + name);
      v = static_cast<T>(f);
    }
    if (name.ends_with("running_var")) {
      for (auto v : t.values)
        if (!(v > T{0})) throw IoError("siw: non-positive running variance in " + name);
    }
  }
  if (!r.at_end()) throw IoError("siw: trailing bytes");
  return w;
}

template <typename T>
CnnWeights<T> load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("siw: cannot open " + path.string());
  return parse<T>(std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>()));
}

}  // namespace specinv::siw
