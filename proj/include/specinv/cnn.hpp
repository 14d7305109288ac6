#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specinv/common.hpp"
#include "specinv/stft.hpp"
#include "specinv/tensor.hpp"

namespace specinv {

enum class CnnMode : std::uint8_t { Full = 0, Strided = 1 };
enum class BnMode { Train, Infer };
/// Strided mode only: with look-ahead off, the skipped-frame channel is
/// discarded and odd frames reuse the previous step's current-frame output.
enum class Lookahead { On, Off };

inline const char* to_string(CnnMode m) { return m == CnnMode::Full ? "full" : "strided"; }

inline constexpr double kBnEpsilon = 1e-5;
inline constexpr double kBnMomentum = 0.1;
inline constexpr double kLeakySlope = 0.1;

inline constexpr std::size_t kStemChannels = 50;
inline constexpr std::size_t kTrunkChannels = 10;
inline constexpr std::size_t kBodyBlocks = 5;
inline constexpr std::size_t kHeadChannels = 50;
inline constexpr std::size_t kStemKernelFreq = 3;
inline constexpr std::size_t kStemKernelTime = 4;
inline constexpr std::size_t kHeadKernelFreq = 3;

struct ConvShape {
  std::size_t out = 0, in = 0, kf = 1, kt = 1;
  std::size_t numel() const noexcept { return out * in * kf * kt; }
  std::size_t fan_in() const noexcept { return in * kf * kt; }
};

struct ConvIndex {
  std::size_t weight;
  std::size_t bias;
  bool has_bias;
};

struct BnIndex {
  std::size_t weight, bias, mean, var;
};

// Fixed tensor order of a weights file; see README for the name table.
namespace slots {
inline constexpr BnIndex kBnIn{0, 1, 2, 3};
inline constexpr ConvIndex kStemConv{4, 5, true};
inline constexpr ConvIndex kStemGateValue{6, 0, false};
inline constexpr ConvIndex kStemGateGate{7, 0, false};
inline constexpr ConvIndex body_conv(std::size_t k) { return {8 + 6 * k, 9 + 6 * k, true}; }
inline constexpr BnIndex body_bn(std::size_t k) { return {10 + 6 * k, 11 + 6 * k, 12 + 6 * k, 13 + 6 * k}; }
inline constexpr BnIndex kDirectBn{38, 39, 40, 41};
inline constexpr ConvIndex kHeadValue{42, 43, true};
inline constexpr ConvIndex kHeadGate{44, 45, true};
inline constexpr ConvIndex kOutBpd{46, 47, true};
inline constexpr ConvIndex kOutFpd{48, 49, true};
inline constexpr std::size_t kCount = 50;
}  // namespace slots

inline std::size_t head_outputs(CnnMode m) { return m == CnnMode::Full ? 1 : 2; }

/// Ordered named tensors of the network. Buffers (BN running statistics) are
/// stored alongside parameters but are not trainable.
template <typename T>
class CnnWeights {
 public:
  explicit CnnWeights(CnnMode mode = CnnMode::Full) : mode_(mode) {
    tensors_.reserve(slots::kCount);
    add_bn("bn_in", 1);
    add_conv("stem.conv", {kStemChannels, 1, kStemKernelFreq, kStemKernelTime}, true);
    add_conv("stem.gate_value", {kTrunkChannels, kStemChannels, 1, 1}, false);
    add_conv("stem.gate_gate", {kTrunkChannels, kStemChannels, 1, 1}, false);
    for (std::size_t k = 0; k < kBodyBlocks; ++k) {
      const std::string p = "body." + std::to_string(k);
      add_conv(p + ".conv", {kTrunkChannels, kTrunkChannels, 1, 1}, true);
      add_bn(p + ".bn", kTrunkChannels);
    }
    add_bn("direct_bn", kTrunkChannels);
    add_conv("head.value", {kHeadChannels, 2 * kTrunkChannels, kHeadKernelFreq, 1}, true);
    add_conv("head.gate", {kHeadChannels, 2 * kTrunkChannels, kHeadKernelFreq, 1}, true);
    add_conv("head.out_bpd", {head_outputs(mode), kHeadChannels, 1, 1}, true);
    add_conv("head.out_fpd", {head_outputs(mode), kHeadChannels, 1, 1}, true);
  }

  /// He-uniform kernels (bound sqrt(6 / fan_in)), zero biases, identity BN.
  static CnnWeights he_uniform(CnnMode mode, std::uint64_t seed) {
    CnnWeights w(mode);
    std::uint64_t state = seed ^ 0x9E3779B97F4A7C15ull;
    auto next_unit = [&state] {
      // splitmix64, 53-bit mantissa
      std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
      z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
      z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
      z ^= z >> 31;
      return static_cast<double>(z >> 11) * 0x1.0p-53;
    };
    for (auto& t : w.tensors_) {
      if (t.dims.size() != 4) continue;
      const double fan_in = static_cast<double>(t.dims[1] * t.dims[2] * t.dims[3]);
      const double bound = std::sqrt(6.0 / fan_in);
      for (auto& v : t.values) v = static_cast<T>((2.0 * next_unit() - 1.0) * bound);
    }
    return w;
  }

  CnnMode mode() const noexcept { return mode_; }
  std::vector<NamedTensor<T>>& tensors() noexcept { return tensors_; }
  const std::vector<NamedTensor<T>>& tensors() const noexcept { return tensors_; }
  NamedTensor<T>& operator[](std::size_t i) { return tensors_[i]; }
  const NamedTensor<T>& operator[](std::size_t i) const { return tensors_[i]; }

  std::span<const T> values(std::size_t i) const { return tensors_[i].values; }

  ConvShape conv_shape(const ConvIndex& c) const {
    const auto& d = tensors_[c.weight].dims;
    return {d[0], d[1], d[2], d[3]};
  }

  std::optional<std::size_t> find(const std::string& name) const {
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      if (tensors_[i].name == name) return i;
    }
    return std::nullopt;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) {
      if (t.trainable) n += t.numel();
    }
    return n;
  }

  template <typename U>
  CnnWeights<U> cast() const {
    CnnWeights<U> out(mode_);
    for (std::size_t i = 0; i < tensors_.size(); ++i) {
      auto& dst = out[i].values;
      const auto& src = tensors_[i].values;
      for (std::size_t k = 0; k < src.size(); ++k) dst[k] = static_cast<U>(src[k]);
    }
    return out;
  }

 private:
  void add_conv(const std::string& prefix, ConvShape s, bool bias) {
    tensors_.push_back({prefix + ".weight", dims4(s), std::vector<T>(s.numel(), T{}), true});
    if (bias) tensors_.push_back({prefix + ".bias", {u32(s.out)}, std::vector<T>(s.out, T{}), true});
  }
  void add_bn(const std::string& prefix, std::size_t ch) {
    tensors_.push_back({prefix + ".weight", {u32(ch)}, std::vector<T>(ch, T{1}), true});
    tensors_.push_back({prefix + ".bias", {u32(ch)}, std::vector<T>(ch, T{0}), true});
    tensors_.push_back({prefix + ".running_mean", {u32(ch)}, std::vector<T>(ch, T{0}), false});
    tensors_.push_back({prefix + ".running_var", {u32(ch)}, std::vector<T>(ch, T{1}), false});
  }
  static std::uint32_t u32(std::size_t v) { return static_cast<std::uint32_t>(v); }
  static std::vector<std::uint32_t> dims4(ConvShape s) { return {u32(s.out), u32(s.in), u32(s.kf), u32(s.kt)}; }

  CnnMode mode_;
  std::vector<NamedTensor<T>> tensors_;
};

// ---------------------------------------------------------------------------
// Layers

namespace detail {

/// Valid output range [lo, hi) along one axis for kernel tap k, where the
/// input index is out * stride + k - pad.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t n_in, std::size_t n_out, std::size_t stride,
                                                     std::size_t k, std::size_t pad) {
  // need 0 <= o*stride + k - pad < n_in
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(n_in) - 1 + static_cast<std::ptrdiff_t>(pad) -
                             static_cast<std::ptrdiff_t>(k);
  if (top < 0) return {0, 0};
  std::size_t hi = static_cast<std::size_t>(top) / stride + 1;
  hi = std::min(hi, n_out);
  if (lo > hi) lo = hi;
  return {lo, hi};
}

}  // namespace detail

inline std::size_t strided_length(std::size_t n, std::size_t stride) { return (n + stride - 1) / stride; }

/// 2-D convolution over (freq, time). Time is left-padded with k_t - 1 zeros
/// (output frame t depends on input frames <= t * stride); frequency is padded
/// symmetrically by (k_f - 1) / 2 so the bin count is preserved.
template <typename T>
Tensor<T> conv2d_causal(const Tensor<T>& x, std::span<const T> kernel, std::span<const T> bias, ConvShape s,
                        std::size_t stride_time = 1) {
  if (x.channels != s.in || kernel.size() != s.numel() || (!bias.empty() && bias.size() != s.out))
    throw ConfigError("conv2d_causal: shape mismatch");
  if (s.kf % 2 == 0) throw ConfigError("conv2d_causal: frequency kernel must be odd");
  if (stride_time == 0) throw ConfigError("conv2d_causal: stride must be positive");
  const std::size_t F = x.freq, Tin = x.time, Tout = strided_length(Tin, stride_time);
  const std::size_t pf = (s.kf - 1) / 2, pt = s.kt - 1;
  Tensor<T> y(x.batch, s.out, F, Tout);
  for (std::size_t n = 0; n < x.batch; ++n) {
    for (std::size_t o = 0; o < s.out; ++o) {
      T* out = y.plane_ptr(n, o);
      const T b = bias.empty() ? T{} : bias[o];
      std::fill(out, out + y.plane(), b);
      for (std::size_t i = 0; i < s.in; ++i) {
        const T* in = x.plane_ptr(n, i);
        for (std::size_t kf = 0; kf < s.kf; ++kf) {
          const auto [f_lo, f_hi] = detail::tap_range(F, F, 1, kf, pf);
          for (std::size_t kt = 0; kt < s.kt; ++kt) {
            const T w = kernel[((o * s.in + i) * s.kf + kf) * s.kt + kt];
            const auto [t_lo, t_hi] = detail::tap_range(Tin, Tout, stride_time, kt, pt);
            for (std::size_t f = f_lo; f < f_hi; ++f) {
              const T* row_in = in + (f + kf - pf) * Tin;
              T* row_out = out + f * Tout;
              if (stride_time == 1) {
                const T* src = row_in + kt - pt;
                for (std::size_t t = t_lo; t < t_hi; ++t) row_out[t] += w * src[t];
              } else {
                for (std::size_t t = t_lo; t < t_hi; ++t) row_out[t] += w * row_in[t * stride_time + kt - pt];
              }
            }
          }
        }
      }
    }
  }
  return y;
}

/// Accumulates gradients of conv2d_causal into grad_w / grad_b (may be empty)
/// and, when grad_x is non-null, into grad_x.
template <typename T>
void conv2d_causal_backward(const Tensor<T>& x, std::span<const T> kernel, ConvShape s, std::size_t stride_time,
                            const Tensor<T>& grad_y, Tensor<T>* grad_x, std::span<T> grad_w, std::span<T> grad_b) {
  const std::size_t F = x.freq, Tin = x.time, Tout = grad_y.time;
  const std::size_t pf = (s.kf - 1) / 2, pt = s.kt - 1;
  for (std::size_t n = 0; n < x.batch; ++n) {
    for (std::size_t o = 0; o < s.out; ++o) {
      const T* gout = grad_y.plane_ptr(n, o);
      if (!grad_b.empty()) {
        T acc{};
        for (std::size_t k = 0; k < grad_y.plane(); ++k) acc += gout[k];
        grad_b[o] += acc;
      }
      for (std::size_t i = 0; i < s.in; ++i) {
        const T* in = x.plane_ptr(n, i);
        T* gin = grad_x ? grad_x->plane_ptr(n, i) : nullptr;
        for (std::size_t kf = 0; kf < s.kf; ++kf) {
          const auto [f_lo, f_hi] = detail::tap_range(F, F, 1, kf, pf);
          for (std::size_t kt = 0; kt < s.kt; ++kt) {
            const std::size_t widx = ((o * s.in + i) * s.kf + kf) * s.kt + kt;
            const T w = kernel[widx];
            const auto [t_lo, t_hi] = detail::tap_range(Tin, Tout, stride_time, kt, pt);
            T gw{};
            for (std::size_t f = f_lo; f < f_hi; ++f) {
              const std::size_t row = (f + kf - pf) * Tin;
              const T* g = gout + f * Tout;
              for (std::size_t t = t_lo; t < t_hi; ++t) {
                const std::size_t ti = row + t * stride_time + kt - pt;
                gw += g[t] * in[ti];
                if (gin) gin[ti] += w * g[t];
              }
            }
            if (!grad_w.empty()) grad_w[widx] += gw;
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> leaky_relu(Tensor<T> x, T slope = static_cast<T>(kLeakySlope)) {
  for (auto& v : x.data) v = v > T{0} ? v : slope * v;
  return x;
}

template <typename T>
T sigmoid(T v) {
  return T{1} / (T{1} + std::exp(-v));
}

template <typename T>
struct BatchNormParams {
  std::span<const T> gamma, beta, running_mean, running_var;
  double epsilon = kBnEpsilon;
};

template <typename T>
BatchNormParams<T> bn_params(const CnnWeights<T>& w, const BnIndex& idx) {
  return {w.values(idx.weight), w.values(idx.bias), w.values(idx.mean), w.values(idx.var), kBnEpsilon};
}

/// Saved state of a train-mode batch norm: normalized input and per-channel
/// batch statistics (biased variance).
template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> mean, var, invstd;
  std::size_t count = 0;
};

/// Infer: running statistics. Train: statistics over (batch, freq, time) per
/// channel; the cache receives what backward and the running-stat update need.
template <typename T>
Tensor<T> batchnorm(const Tensor<T>& x, const BatchNormParams<T>& p, BnMode mode, BatchNormCache<T>* cache = nullptr) {
  const std::size_t C = x.channels;
  if (p.gamma.size() != C || p.beta.size() != C || p.running_mean.size() != C || p.running_var.size() != C)
    throw ConfigError("batchnorm: channel count mismatch");
  Tensor<T> y = Tensor<T>::like(x);
  const std::size_t P = x.plane();
  const T eps = static_cast<T>(p.epsilon);
  if (mode == BnMode::Infer) {
    for (std::size_t c = 0; c < C; ++c) {
      const T scale = p.gamma[c] / std::sqrt(p.running_var[c] + eps);
      const T mean = p.running_mean[c];
      const T shift = p.beta[c];
      for (std::size_t n = 0; n < x.batch; ++n) {
        const T* src = x.plane_ptr(n, c);
        T* dst = y.plane_ptr(n, c);
        for (std::size_t k = 0; k < P; ++k) dst[k] = (src[k] - mean) * scale + shift;
      }
    }
    return y;
  }
  BatchNormCache<T> local;
  BatchNormCache<T>& bc = cache ? *cache : local;
  bc.xhat = Tensor<T>::like(x);
  bc.mean.assign(C, T{});
  bc.var.assign(C, T{});
  bc.invstd.assign(C, T{});
  bc.count = x.batch * P;
  const T m = static_cast<T>(bc.count);
  for (std::size_t c = 0; c < C; ++c) {
    T sum{};
    for (std::size_t n = 0; n < x.batch; ++n) {
      const T* src = x.plane_ptr(n, c);
      for (std::size_t k = 0; k < P; ++k) sum += src[k];
    }
    const T mean = sum / m;
    T sq{};
    for (std::size_t n = 0; n < x.batch; ++n) {
      const T* src = x.plane_ptr(n, c);
      for (std::size_t k = 0; k < P; ++k) sq += (src[k] - mean) * (src[k] - mean);
    }
    const T var = sq / m;
    const T invstd = T{1} / std::sqrt(var + eps);
    bc.mean[c] = mean;
    bc.var[c] = var;
    bc.invstd[c] = invstd;
    for (std::size_t n = 0; n < x.batch; ++n) {
      const T* src = x.plane_ptr(n, c);
      T* xh = bc.xhat.plane_ptr(n, c);
      T* dst = y.plane_ptr(n, c);
      for (std::size_t k = 0; k < P; ++k) {
        xh[k] = (src[k] - mean) * invstd;
        dst[k] = xh[k] * p.gamma[c] + p.beta[c];
      }
    }
  }
  return y;
}

/// value(x) * sigmoid(gate(x)), both convolutions sharing padding rules.
template <typename T>
struct GatedConv {
  std::span<const T> value_kernel, value_bias, gate_kernel, gate_bias;
  ConvShape value_shape, gate_shape;
};

template <typename T>
Tensor<T> freq_gated_conv(const Tensor<T>& x, const GatedConv<T>& g, Tensor<T>* value_out = nullptr,
                          Tensor<T>* gate_sigmoid_out = nullptr) {
  if (g.value_shape.out != g.gate_shape.out) throw ConfigError("freq_gated_conv: channel mismatch");
  Tensor<T> v = conv2d_causal(x, g.value_kernel, g.value_bias, g.value_shape);
  Tensor<T> s = conv2d_causal(x, g.gate_kernel, g.gate_bias, g.gate_shape);
  Tensor<T> y = Tensor<T>::like(v);
  for (std::size_t k = 0; k < y.size(); ++k) {
    s.data[k] = sigmoid(s.data[k]);
    y.data[k] = v.data[k] * s.data[k];
  }
  if (value_out) *value_out = std::move(v);
  if (gate_sigmoid_out) *gate_sigmoid_out = std::move(s);
  return y;
}

template <typename T>
GatedConv<T> stem_gate(const CnnWeights<T>& w) {
  return {w.values(slots::kStemGateValue.weight), {}, w.values(slots::kStemGateGate.weight), {},
          w.conv_shape(slots::kStemGateValue), w.conv_shape(slots::kStemGateGate)};
}

template <typename T>
GatedConv<T> head_gate(const CnnWeights<T>& w) {
  return {w.values(slots::kHeadValue.weight), w.values(slots::kHeadValue.bias), w.values(slots::kHeadGate.weight),
          w.values(slots::kHeadGate.bias), w.conv_shape(slots::kHeadValue), w.conv_shape(slots::kHeadGate)};
}

template <typename T>
Tensor<T> conv(const Tensor<T>& x, const CnnWeights<T>& w, const ConvIndex& c, std::size_t stride = 1) {
  return conv2d_causal(x, w.values(c.weight), c.has_bias ? w.values(c.bias) : std::span<const T>{}, w.conv_shape(c),
                       stride);
}

// ---------------------------------------------------------------------------
// Network

/// Intermediate activations kept for the backward pass.
template <typename T>
struct ForwardTrace {
  Tensor<T> input;
  BatchNormCache<T> bn_in;
  Tensor<T> bn_in_out;
  Tensor<T> stem_pre;
  Tensor<T> stem_act;
  Tensor<T> gate_value, gate_sigmoid;
  Tensor<T> stem_out;
  std::array<Tensor<T>, kBodyBlocks> body_in, body_pre;
  std::array<BatchNormCache<T>, kBodyBlocks> body_bn;
  Tensor<T> body_out;
  BatchNormCache<T> direct_bn;
  Tensor<T> concat;
  Tensor<T> head_value, head_sigmoid;
  Tensor<T> head_out;
  std::size_t stem_stride = 1;
};

template <typename T>
struct HeadOutputs {
  Tensor<T> fpd;  // batch x k x F x T_steps
  Tensor<T> bpd;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> y(a.batch, a.channels + b.channels, a.freq, a.time);
  const std::size_t P = a.plane();
  for (std::size_t n = 0; n < a.batch; ++n) {
    for (std::size_t c = 0; c < a.channels; ++c) std::copy_n(a.plane_ptr(n, c), P, y.plane_ptr(n, c));
    for (std::size_t c = 0; c < b.channels; ++c) std::copy_n(b.plane_ptr(n, c), P, y.plane_ptr(n, a.channels + c));
  }
  return y;
}

template <typename T>
Tensor<T> keep_last_frames(const Tensor<T>& x, std::size_t keep) {
  if (keep == 0 || keep >= x.time) return x;
  Tensor<T> y(x.batch, x.channels, x.freq, keep);
  for (std::size_t n = 0; n < x.batch; ++n)
    for (std::size_t c = 0; c < x.channels; ++c)
      for (std::size_t f = 0; f < x.freq; ++f)
        for (std::size_t t = 0; t < keep; ++t) y.at(n, c, f, t) = x.at(n, c, f, x.time - keep + t);
  return y;
}

/// Runs the layer stack on already padded input and returns the raw head
/// outputs, one column per stem-convolution step. keep_last > 0 crops the time
/// axis right after the stem convolution (used for incremental inference;
/// every later layer acts per frame).
template <typename T>
HeadOutputs<T> forward_layers(const Tensor<T>& x, const CnnWeights<T>& w, std::size_t stem_stride, BnMode bn,
                              ForwardTrace<T>* trace = nullptr, std::size_t keep_last = 0) {
  using namespace slots;
  ForwardTrace<T> local;
  ForwardTrace<T>& tr = trace ? *trace : local;
  const bool keep = trace != nullptr;
  tr.stem_stride = stem_stride;
  if (keep) tr.input = x;

  Tensor<T> a0 = batchnorm(x, bn_params(w, kBnIn), bn, keep ? &tr.bn_in : nullptr);
  Tensor<T> a1 = keep_last_frames(conv(a0, w, kStemConv, stem_stride), keep_last);
  Tensor<T> a2 = leaky_relu(a1);
  Tensor<T> gv, gs;
  Tensor<T> s_out = freq_gated_conv(a2, stem_gate(w), &gv, &gs);
  if (keep) {
    tr.bn_in_out = std::move(a0);
    tr.stem_pre = std::move(a1);
    tr.stem_act = a2;
    tr.gate_value = std::move(gv);
    tr.gate_sigmoid = std::move(gs);
    tr.stem_out = s_out;
  }

  Tensor<T> h = s_out;
  for (std::size_t k = 0; k < kBodyBlocks; ++k) {
    Tensor<T> c = conv(h, w, body_conv(k));
    if (keep) {
      tr.body_in[k] = std::move(h);
      tr.body_pre[k] = c;
    }
    h = batchnorm(leaky_relu(std::move(c)), bn_params(w, body_bn(k)), bn, keep ? &tr.body_bn[k] : nullptr);
  }
  Tensor<T> d = batchnorm(s_out, bn_params(w, kDirectBn), bn, keep ? &tr.direct_bn : nullptr);
  Tensor<T> cat = concat_channels(d, h);
  if (keep) tr.body_out = std::move(h);

  Tensor<T> hv, hs;
  Tensor<T> head = freq_gated_conv(cat, head_gate(w), &hv, &hs);
  HeadOutputs<T> out{conv(head, w, kOutFpd), conv(head, w, kOutBpd)};
  if (keep) {
    tr.concat = std::move(cat);
    tr.head_value = std::move(hv);
    tr.head_sigmoid = std::move(hs);
    tr.head_out = std::move(head);
  }
  return out;
}

/// Strided input is extended to an odd frame count by repeating the last
/// frame, so that every frame is covered by a (skipped, current) pair.
template <typename T>
Tensor<T> pad_for_stride(const Tensor<T>& x) {
  if (x.time % 2 == 1) return x;
  Tensor<T> y(x.batch, x.channels, x.freq, x.time + 1);
  for (std::size_t n = 0; n < x.batch; ++n)
    for (std::size_t c = 0; c < x.channels; ++c)
      for (std::size_t f = 0; f < x.freq; ++f) {
        for (std::size_t t = 0; t < x.time; ++t) y.at(n, c, f, t) = x.at(n, c, f, t);
        y.at(n, c, f, x.time) = x.at(n, c, f, x.time - 1);
      }
  return y;
}

/// Expands 2-channel strided head output (one column per step j, computed at
/// frame 2j) back to one column per frame: channel 1 -> frame 2j, channel 0 ->
/// frame 2j - 1. With look-ahead off the odd frames take the previous step's
/// channel 1 instead.
template <typename T>
Tensor<T> interleave_strided(const Tensor<T>& raw, std::size_t frames, Lookahead la = Lookahead::On) {
  Tensor<T> y(raw.batch, 1, raw.freq, frames);
  for (std::size_t n = 0; n < raw.batch; ++n)
    for (std::size_t f = 0; f < raw.freq; ++f)
      for (std::size_t t = 0; t < frames; ++t) {
        T v;
        if (t % 2 == 0) {
          v = raw.at(n, 1, f, t / 2);
        } else if (la == Lookahead::On) {
          v = raw.at(n, 0, f, (t + 1) / 2);
        } else {
          v = raw.at(n, 1, f, (t - 1) / 2);
        }
        y.at(n, 0, f, t) = v;
      }
  return y;
}

template <typename T>
struct CnnOutput {
  Tensor<T> fpd;  // batch x 1 x F x T, raw angles
  Tensor<T> bpd;
};

struct ForwardOptions {
  BnMode bn = BnMode::Infer;
  Lookahead lookahead = Lookahead::On;
};

/// Full network: log-magnitude (batch x 1 x F x T) -> raw FPD and BPD angles of
/// the same shape. Outputs are not wrapped.
template <typename T>
CnnOutput<T> forward(const Tensor<T>& x, const CnnWeights<T>& w, ForwardOptions opt = {},
                     ForwardTrace<T>* trace = nullptr) {
  if (x.channels != 1 || x.freq == 0 || x.time == 0) throw ConfigError("cnn forward: expected 1 x F x T input, F, T > 0");
  if (w.mode() == CnnMode::Full) {
    auto raw = forward_layers(x, w, 1, opt.bn, trace);
    return {std::move(raw.fpd), std::move(raw.bpd)};
  }
  const auto padded = pad_for_stride(x);
  auto raw = forward_layers(padded, w, 2, opt.bn, trace);
  return {interleave_strided(raw.fpd, x.time, opt.lookahead), interleave_strided(raw.bpd, x.time, opt.lookahead)};
}

template <typename T>
Tensor<T> to_input_tensor(const FrameMatrix<double>& m) {
  Tensor<T> x(1, 1, m.bins(), m.frames());
  for (std::size_t f = 0; f < m.bins(); ++f)
    for (std::size_t t = 0; t < m.frames(); ++t) x.at(0, 0, f, t) = static_cast<T>(m(f, t));
  return x;
}

template <typename T>
FrameMatrix<double> to_frame_matrix(const Tensor<T>& x, std::size_t n = 0, std::size_t c = 0) {
  FrameMatrix<double> m(x.freq, x.time);
  for (std::size_t f = 0; f < x.freq; ++f)
    for (std::size_t t = 0; t < x.time; ++t) m(f, t) = static_cast<double>(x.at(n, c, f, t));
  return m;
}

// ---------------------------------------------------------------------------
// Cost accounting

struct CostReport {
  std::size_t params = 0;
  /// Convolution multiply-accumulates per output frame (bias, BN and
  /// activations excluded).
  double macs_per_frame = 0.0;
  double gmac_per_s = 0.0;
};

template <typename T>
CostReport count_params_and_macs(const CnnWeights<T>& w, std::size_t freq_bins, double frames_per_second) {
  using namespace slots;
  std::vector<ConvIndex> convs{kStemConv, kStemGateValue, kStemGateGate};
  for (std::size_t k = 0; k < kBodyBlocks; ++k) convs.push_back(body_conv(k));
  convs.insert(convs.end(), {kHeadValue, kHeadGate, kOutBpd, kOutFpd});
  double per_step = 0.0;
  for (const auto& c : convs) {
    const auto s = w.conv_shape(c);
    per_step += static_cast<double>(s.numel()) * static_cast<double>(freq_bins);
  }
  // Strided networks run once every two frames.
  const double per_frame = w.mode() == CnnMode::Full ? per_step : per_step / 2.0;
  return {w.parameter_count(), per_frame, per_frame * frames_per_second / 1e9};
}

}  // namespace specinv
