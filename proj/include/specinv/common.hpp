#pragma once

#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace specinv {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

using cplx = std::complex<double>;

/// Raised for unreadable or malformed files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when inputs disagree on geometry, mode or shape.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a linear solve cannot proceed (zero pivot, singular matrix).
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense bins x frames matrix stored frame-major, so each frame is contiguous.
template <typename T>
class FrameMatrix {
 public:
  FrameMatrix() = default;
  FrameMatrix(std::size_t bins, std::size_t frames, T fill = T{})
      : bins_(bins), frames_(frames), data_(bins * frames, fill) {}

  std::size_t bins() const noexcept { return bins_; }
  std::size_t frames() const noexcept { return frames_; }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t bin, std::size_t frame) { return data_[frame * bins_ + bin]; }
  const T& operator()(std::size_t bin, std::size_t frame) const { return data_[frame * bins_ + bin]; }

  std::span<T> frame(std::size_t tau) { return {data_.data() + tau * bins_, bins_}; }
  std::span<const T> frame(std::size_t tau) const { return {data_.data() + tau * bins_, bins_}; }

  std::vector<T>& raw() noexcept { return data_; }
  const std::vector<T>& raw() const noexcept { return data_; }

  bool operator==(const FrameMatrix&) const = default;

 private:
  std::size_t bins_ = 0;
  std::size_t frames_ = 0;
  std::vector<T> data_;
};

inline void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace specinv
