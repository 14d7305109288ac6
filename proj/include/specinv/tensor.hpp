#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "specinv/common.hpp"

namespace specinv {

/// Dense batch x channels x freq x time tensor, time fastest. A single example
/// (batch == 1) is the Channels x Frequency x Time layout the network consumes.
template <typename T>
struct Tensor {
  std::size_t batch = 1;
  std::size_t channels = 0;
  std::size_t freq = 0;
  std::size_t time = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::size_t n, std::size_t c, std::size_t f, std::size_t t, T fill = T{})
      : batch(n), channels(c), freq(f), time(t), data(n * c * f * t, fill) {}

  static Tensor like(const Tensor& o, T fill = T{}) { return Tensor(o.batch, o.channels, o.freq, o.time, fill); }

  std::size_t plane() const noexcept { return freq * time; }
  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Tensor& o) const noexcept {
    return batch == o.batch && channels == o.channels && freq == o.freq && time == o.time;
  }

  T& at(std::size_t n, std::size_t c, std::size_t f, std::size_t t) {
    return data[((n * channels + c) * freq + f) * time + t];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t f, std::size_t t) const {
    return data[((n * channels + c) * freq + f) * time + t];
  }

  T* plane_ptr(std::size_t n, std::size_t c) { return data.data() + (n * channels + c) * plane(); }
  const T* plane_ptr(std::size_t n, std::size_t c) const { return data.data() + (n * channels + c) * plane(); }

  bool operator==(const Tensor&) const = default;
};

/// A named parameter or buffer; dims follow (out, in, k_freq, k_time) for
/// convolution kernels and (channels) for vectors.
template <typename T>
struct NamedTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<T> values;
  bool trainable = true;

  std::size_t numel() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

}  // namespace specinv
