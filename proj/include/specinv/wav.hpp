#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "specinv/common.hpp"
#include "specinv/stft.hpp"

namespace specinv::wav {

enum class SampleFormat { Pcm16, Float32 };

namespace detail {

static_assert(std::endian::native == std::endian::little, "WAV codec assumes a little-endian host");

template <typename T>
T load(const std::vector<char>& buf, std::size_t off) {
  if (off + sizeof(T) > buf.size()) throw IoError("wav: truncated header");
  T v;
  std::memcpy(&v, buf.data() + off, sizeof(T));
  return v;
}

template <typename T>
void store(std::ofstream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

}  // namespace detail

/// Reads a mono PCM16 or IEEE float32 RIFF/WAVE file.
inline Waveform read(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("wav: cannot open " + path.string());
  std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw IoError("wav: not a RIFF/WAVE file: " + path.string());

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;
  std::size_t off = 12;
  while (off + 8 <= buf.size()) {
    const std::string id(buf.data() + off, 4);
    const auto len = detail::load<std::uint32_t>(buf, off + 4);
    const std::size_t body = off + 8;
    if (id == "fmt ") {
      format = detail::load<std::uint16_t>(buf, body);
      channels = detail::load<std::uint16_t>(buf, body + 2);
      rate = detail::load<std::uint32_t>(buf, body + 4);
      bits = detail::load<std::uint16_t>(buf, body + 14);
      if (format == 0xFFFE && len >= 26) format = detail::load<std::uint16_t>(buf, body + 24);
      have_fmt = true;
    } else if (id == "data") {
      data_off = body;
      data_len = std::min<std::size_t>(len, buf.size() - body);
      break;
    }
    off = body + len + (len & 1u);
  }
  if (!have_fmt || data_off == 0) throw IoError("wav: missing fmt or data chunk: " + path.string());
  if (channels != 1) throw IoError("wav: mono required (got " + std::to_string(channels) + " channels)");

  Waveform w;
  w.sample_rate = rate;
  if (format == 1 && bits == 16) {
    const std::size_t n = data_len / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      w.samples[i] = detail::load<std::int16_t>(buf, data_off + 2 * i) / 32768.0;
  } else if (format == 3 && bits == 32) {
    const std::size_t n = data_len / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) w.samples[i] = detail::load<float>(buf, data_off + 4 * i);
  } else {
    throw IoError("wav: unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) +
                  " bits)");
  }
  return w;
}

inline void write(const std::filesystem::path& path, const Waveform& w, SampleFormat fmt = SampleFormat::Pcm16) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("wav: cannot write " + path.string());
  const std::uint16_t bits = fmt == SampleFormat::Pcm16 ? 16 : 32;
  const std::uint16_t tag = fmt == SampleFormat::Pcm16 ? 1 : 3;
  const auto rate = static_cast<std::uint32_t>(std::lround(w.sample_rate));
  const auto data_len = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));

  os.write("RIFF", 4);
  detail::store<std::uint32_t>(os, 36 + data_len);
  os.write("WAVEfmt ", 8);
  detail::store<std::uint32_t>(os, 16);
  detail::store<std::uint16_t>(os, tag);
  detail::store<std::uint16_t>(os, 1);
  detail::store<std::uint32_t>(os, rate);
  detail::store<std::uint32_t>(os, rate * (bits / 8));
  detail::store<std::uint16_t>(os, bits / 8);
  detail::store<std::uint16_t>(os, bits);
  os.write("data", 4);
  detail::store<std::uint32_t>(os, data_len);
  for (double s : w.samples) {
    if (fmt == SampleFormat::Pcm16) {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      detail::store<std::int16_t>(os, static_cast<std::int16_t>(std::lround(c * 32768.0)));
    } else {
      detail::store<float>(os, static_cast<float>(s));
    }
  }
  if (!os) throw IoError("wav: write failed: " + path.string());
}

}  // namespace specinv::wav
