#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "specinv/cnn.hpp"
#include "specinv/phase_features.hpp"
#include "specinv/siw.hpp"
#include "specinv/stft.hpp"
#include "specinv/wav.hpp"

namespace specinv {

// ---------------------------------------------------------------------------
// Loss and targets

/// -sum cos(pred - target) over every element.
template <typename T>
T von_mises_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (!pred.same_shape(target)) throw ConfigError("von_mises_loss: shape mismatch");
  T acc{};
  for (std::size_t k = 0; k < pred.size(); ++k) acc -= std::cos(pred.data[k] - target.data[k]);
  return acc;
}

/// Masked variant; when grad is non-null it receives d(loss)/d(pred).
template <typename T>
T von_mises_loss(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& mask, Tensor<T>* grad) {
  if (!pred.same_shape(target) || !pred.same_shape(mask)) throw ConfigError("von_mises_loss: shape mismatch");
  if (grad) *grad = Tensor<T>::like(pred);
  T acc{};
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (mask.data[k] == T{0}) continue;
    const T d = pred.data[k] - target.data[k];
    acc -= mask.data[k] * std::cos(d);
    if (grad) grad->data[k] = mask.data[k] * std::sin(d);
  }
  return acc;
}

/// Per-frame supervision: FPD row 0 and BPD frame 0 are undefined and masked.
template <typename T>
struct Targets {
  Tensor<T> fpd, bpd;            // batch x 1 x F x T
  Tensor<T> fpd_mask, bpd_mask;  // 1 where supervised, 0 elsewhere
};

template <typename T>
Targets<T> extract_targets(const ComplexSpectrogram& s) {
  if (s.frames() < 2) throw std::invalid_argument("extract_targets: need at least two frames");
  const std::size_t F = s.bins(), Tn = s.frames();
  const auto phase = phase_of(s);
  Targets<T> out{Tensor<T>(1, 1, F, Tn), Tensor<T>(1, 1, F, Tn), Tensor<T>(1, 1, F, Tn), Tensor<T>(1, 1, F, Tn)};
  for (std::size_t tau = 0; tau < Tn; ++tau) {
    const auto u = fpd(phase, tau);
    for (std::size_t w = 1; w < F; ++w) {
      out.fpd.at(0, 0, w, tau) = static_cast<T>(u[w - 1]);
      out.fpd_mask.at(0, 0, w, tau) = T{1};
    }
    if (tau == 0) continue;
    const auto b = bpd_from_tpd(tpd(phase, tau), s.config.hop, s.config.half());
    for (std::size_t w = 0; w < F; ++w) {
      out.bpd.at(0, 0, w, tau) = static_cast<T>(b[w]);
      out.bpd_mask.at(0, 0, w, tau) = T{1};
    }
  }
  return out;
}

/// Concatenates single-example tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<Tensor<T>>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: empty");
  const auto& f = items.front();
  Tensor<T> y(items.size(), f.channels, f.freq, f.time);
  const std::size_t per = f.size();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].channels != f.channels || items[i].freq != f.freq || items[i].time != f.time || items[i].batch != 1)
      throw ConfigError("stack_batch: shape mismatch");
    std::copy(items[i].data.begin(), items[i].data.end(), y.data.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Backward pass

/// One gradient tensor per trainable, non-frozen weight tensor.
template <typename T>
struct GradientSet {
  std::vector<std::size_t> slots;
  std::vector<NamedTensor<T>> tensors;

  const NamedTensor<T>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

template <typename T>
struct BackwardResult {
  T loss_fpd{};
  T loss_bpd{};
  std::size_t count_fpd = 0;
  std::size_t count_bpd = 0;
  GradientSet<T> grads;
  ForwardTrace<T> trace;
};

namespace detail {

template <typename T>
void bn_backward(const BatchNormCache<T>& c, std::span<const T> gamma, const Tensor<T>& dy, Tensor<T>* dx,
                 std::span<T> dgamma, std::span<T> dbeta) {
  const std::size_t P = dy.plane();
  const T m = static_cast<T>(c.count);
  if (dx) *dx = Tensor<T>::like(dy);
  for (std::size_t ch = 0; ch < dy.channels; ++ch) {
    T sum_dy{}, sum_dy_xhat{};
    for (std::size_t n = 0; n < dy.batch; ++n) {
      const T* g = dy.plane_ptr(n, ch);
      const T* xh = c.xhat.plane_ptr(n, ch);
      for (std::size_t k = 0; k < P; ++k) {
        sum_dy += g[k];
        sum_dy_xhat += g[k] * xh[k];
      }
    }
    dgamma[ch] += sum_dy_xhat;
    dbeta[ch] += sum_dy;
    if (!dx) continue;
    const T scale = gamma[ch] * c.invstd[ch] / m;
    for (std::size_t n = 0; n < dy.batch; ++n) {
      const T* g = dy.plane_ptr(n, ch);
      const T* xh = c.xhat.plane_ptr(n, ch);
      T* o = dx->plane_ptr(n, ch);
      for (std::size_t k = 0; k < P; ++k) o[k] = scale * (m * g[k] - sum_dy - xh[k] * sum_dy_xhat);
    }
  }
}

template <typename T>
void leaky_backward(const Tensor<T>& pre, Tensor<T>& grad) {
  const T slope = static_cast<T>(kLeakySlope);
  for (std::size_t k = 0; k < grad.size(); ++k)
    if (!(pre.data[k] > T{0})) grad.data[k] *= slope;
}

template <typename T>
Tensor<T> deinterleave_strided(const Tensor<T>& g, std::size_t steps) {
  Tensor<T> raw(g.batch, 2, g.freq, steps);
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t f = 0; f < g.freq; ++f)
      for (std::size_t t = 0; t < g.time; ++t) {
        if (t % 2 == 0)
          raw.at(n, 1, f, t / 2) += g.at(n, 0, f, t);
        else
          raw.at(n, 0, f, (t + 1) / 2) += g.at(n, 0, f, t);
      }
  return raw;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* layer) {
  for (const auto& v : t.data)
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite activation in ") + layer);
}

}  // namespace detail

/// Loss (summed over both heads, masked) and exact gradients with train-mode
/// batch norm. Tensors named in `frozen` are left out of the gradient set.
template <typename T>
BackwardResult<T> backward(const Tensor<T>& x, const CnnWeights<T>& w, const Targets<T>& targets,
                           const std::set<std::string>& frozen = {}) {
  using namespace slots;
  BackwardResult<T> res;
  auto& tr = res.trace;
  const auto out = forward(x, w, {BnMode::Train, Lookahead::On}, &tr);
  detail::check_finite(tr.stem_out, "stem");
  detail::check_finite(tr.body_out, "body");
  detail::check_finite(tr.head_out, "head");
  detail::check_finite(out.fpd, "out_fpd");
  detail::check_finite(out.bpd, "out_bpd");

  Tensor<T> g_fpd, g_bpd;
  res.loss_fpd = von_mises_loss(out.fpd, targets.fpd, targets.fpd_mask, &g_fpd);
  res.loss_bpd = von_mises_loss(out.bpd, targets.bpd, targets.bpd_mask, &g_bpd);
  for (auto v : targets.fpd_mask.data) res.count_fpd += v != T{0};
  for (auto v : targets.bpd_mask.data) res.count_bpd += v != T{0};

  std::vector<std::vector<T>> g(w.tensors().size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i].assign(w[i].values.size(), T{});
  auto gspan = [&g](std::size_t i) { return std::span<T>(g[i]); };

  if (w.mode() == CnnMode::Strided) {
    g_fpd = detail::deinterleave_strided(g_fpd, tr.head_out.time);
    g_bpd = detail::deinterleave_strided(g_bpd, tr.head_out.time);
  }

  // Output projections.
  Tensor<T> d_head = Tensor<T>::like(tr.head_out);
  conv2d_causal_backward(tr.head_out, w.values(kOutFpd.weight), w.conv_shape(kOutFpd), 1, g_fpd, &d_head,
                         gspan(kOutFpd.weight), gspan(kOutFpd.bias));
  conv2d_causal_backward(tr.head_out, w.values(kOutBpd.weight), w.conv_shape(kOutBpd), 1, g_bpd, &d_head,
                         gspan(kOutBpd.weight), gspan(kOutBpd.bias));

  // Head gated convolution.
  Tensor<T> d_hv = Tensor<T>::like(d_head), d_hg = Tensor<T>::like(d_head);
  for (std::size_t k = 0; k < d_head.size(); ++k) {
    const T s = tr.head_sigmoid.data[k];
    d_hv.data[k] = d_head.data[k] * s;
    d_hg.data[k] = d_head.data[k] * tr.head_value.data[k] * s * (T{1} - s);
  }
  Tensor<T> d_cat = Tensor<T>::like(tr.concat);
  conv2d_causal_backward(tr.concat, w.values(kHeadValue.weight), w.conv_shape(kHeadValue), 1, d_hv, &d_cat,
                         gspan(kHeadValue.weight), gspan(kHeadValue.bias));
  conv2d_causal_backward(tr.concat, w.values(kHeadGate.weight), w.conv_shape(kHeadGate), 1, d_hg, &d_cat,
                         gspan(kHeadGate.weight), gspan(kHeadGate.bias));

  // Split the concatenation: [direct BN | body].
  const std::size_t C = kTrunkChannels;
  Tensor<T> d_direct(d_cat.batch, C, d_cat.freq, d_cat.time), d_body(d_cat.batch, C, d_cat.freq, d_cat.time);
  for (std::size_t n = 0; n < d_cat.batch; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      std::copy_n(d_cat.plane_ptr(n, c), d_cat.plane(), d_direct.plane_ptr(n, c));
      std::copy_n(d_cat.plane_ptr(n, C + c), d_cat.plane(), d_body.plane_ptr(n, c));
    }

  Tensor<T> d_stem_out;
  detail::bn_backward(tr.direct_bn, w.values(kDirectBn.weight), d_direct, &d_stem_out, gspan(kDirectBn.weight),
                      gspan(kDirectBn.bias));

  Tensor<T> d_h = std::move(d_body);
  for (std::size_t k = kBodyBlocks; k-- > 0;) {
    Tensor<T> d_act;
    detail::bn_backward(tr.body_bn[k], w.values(body_bn(k).weight), d_h, &d_act, gspan(body_bn(k).weight),
                        gspan(body_bn(k).bias));
    detail::leaky_backward(tr.body_pre[k], d_act);
    Tensor<T> d_in = Tensor<T>::like(tr.body_in[k]);
    conv2d_causal_backward(tr.body_in[k], w.values(body_conv(k).weight), w.conv_shape(body_conv(k)), 1, d_act, &d_in,
                           gspan(body_conv(k).weight), gspan(body_conv(k).bias));
    d_h = std::move(d_in);
  }
  for (std::size_t k = 0; k < d_h.size(); ++k) d_stem_out.data[k] += d_h.data[k];

  // Stem gate.
  Tensor<T> d_gv = Tensor<T>::like(d_stem_out), d_gg = Tensor<T>::like(d_stem_out);
  for (std::size_t k = 0; k < d_stem_out.size(); ++k) {
    const T s = tr.gate_sigmoid.data[k];
    d_gv.data[k] = d_stem_out.data[k] * s;
    d_gg.data[k] = d_stem_out.data[k] * tr.gate_value.data[k] * s * (T{1} - s);
  }
  Tensor<T> d_act = Tensor<T>::like(tr.stem_act);
  conv2d_causal_backward(tr.stem_act, w.values(kStemGateValue.weight), w.conv_shape(kStemGateValue), 1, d_gv, &d_act,
                         gspan(kStemGateValue.weight), std::span<T>{});
  conv2d_causal_backward(tr.stem_act, w.values(kStemGateGate.weight), w.conv_shape(kStemGateGate), 1, d_gg, &d_act,
                         gspan(kStemGateGate.weight), std::span<T>{});
  detail::leaky_backward(tr.stem_pre, d_act);

  Tensor<T> d_bn_out = Tensor<T>::like(tr.bn_in_out);
  conv2d_causal_backward(tr.bn_in_out, w.values(kStemConv.weight), w.conv_shape(kStemConv), tr.stem_stride, d_act,
                         &d_bn_out, gspan(kStemConv.weight), gspan(kStemConv.bias));
  detail::bn_backward(tr.bn_in, w.values(kBnIn.weight), d_bn_out, static_cast<Tensor<T>*>(nullptr), gspan(kBnIn.weight), gspan(kBnIn.bias));

  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto& t = w[i];
    if (!t.trainable || frozen.contains(t.name)) continue;
    res.grads.slots.push_back(i);
    res.grads.tensors.push_back({t.name, t.dims, std::move(g[i]), true});
  }
  return res;
}

/// Momentum update of BN running statistics from a train-mode trace
/// (unbiased variance, as in the usual batch-norm convention).
template <typename T>
void update_running_stats(CnnWeights<T>& w, const ForwardTrace<T>& tr, double momentum = kBnMomentum) {
  using namespace slots;
  auto apply = [&](const BnIndex& idx, const BatchNormCache<T>& c) {
    auto& mean = w[idx.mean].values;
    auto& var = w[idx.var].values;
    const T mom = static_cast<T>(momentum);
    const T unbias = c.count > 1 ? static_cast<T>(c.count) / static_cast<T>(c.count - 1) : T{1};
    for (std::size_t ch = 0; ch < mean.size(); ++ch) {
      mean[ch] = (T{1} - mom) * mean[ch] + mom * c.mean[ch];
      var[ch] = (T{1} - mom) * var[ch] + mom * c.var[ch] * unbias;
    }
  };
  apply(kBnIn, tr.bn_in);
  for (std::size_t k = 0; k < kBodyBlocks; ++k) apply(body_bn(k), tr.body_bn[k]);
  apply(kDirectBn, tr.direct_bn);
}

// ---------------------------------------------------------------------------
// Optimizer

/// Linear warm-up to `peak`, then cosine annealing in fixed-length cycles whose
/// peak decays geometrically.
struct LrSchedule {
  double peak = 1e-3;
  std::size_t ramp_steps = 1000;
  std::size_t cycle_steps = 1000;
  double cycle_decay = 0.97;

  double at(std::size_t step) const {
    if (step < ramp_steps) return peak * static_cast<double>(step + 1) / static_cast<double>(ramp_steps);
    const std::size_t k = step - ramp_steps;
    const std::size_t cycle = k / cycle_steps;
    const double pos = static_cast<double>(k % cycle_steps) / static_cast<double>(cycle_steps);
    return peak * std::pow(cycle_decay, static_cast<double>(cycle)) * 0.5 * (1.0 + std::cos(kPi * pos));
  }
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;
};

/// Adam moments, one pair per weight tensor (unused for buffers).
struct AdamState {
  std::size_t step = 0;
  std::vector<std::vector<double>> m, v;

  template <typename T>
  static AdamState for_weights(const CnnWeights<T>& w) {
    AdamState s;
    for (const auto& t : w.tensors()) {
      s.m.emplace_back(t.values.size(), 0.0);
      s.v.emplace_back(t.values.size(), 0.0);
    }
    return s;
  }
};

/// Adam with decoupled weight decay:
///   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
template <typename T>
void optimizer_step(CnnWeights<T>& w, const GradientSet<T>& grads, AdamState& state, double lr,
                    const AdamConfig& cfg) {
  if (state.m.size() != w.tensors().size()) state = AdamState::for_weights(w);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t gi = 0; gi < grads.slots.size(); ++gi) {
    const std::size_t slot = grads.slots[gi];
    auto& values = w[slot].values;
    const auto& g = grads.tensors[gi].values;
    auto& m = state.m[slot];
    auto& v = state.v[slot];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      const double mh = m[k] / bc1;
      const double vh = v[k] / bc2;
      const double wk = static_cast<double>(values[k]);
      values[k] = static_cast<T>(wk - lr * (mh / (std::sqrt(vh) + cfg.epsilon) + cfg.weight_decay * wk));
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainingConfig {
  AnalysisConfig stft;
  CnnMode mode = CnnMode::Full;
  std::size_t batch_size = 8;
  double segment_seconds = 1.0;
  std::size_t steps = 500;
  LrSchedule lr;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Write a weights file and a resumable state file every N steps (0: never).
  std::size_t checkpoint_every = 0;
  std::filesystem::path checkpoint_path;
};

/// Per-element mean von Mises loss of each head at one step.
struct LossLogRow {
  std::size_t step = 0;
  double loss_fpd = 0.0;
  double loss_bpd = 0.0;
  double lr = 0.0;

  double total() const { return loss_fpd + loss_bpd; }
  bool operator==(const LossLogRow&) const = default;
};

struct TrainState {
  CnnWeights<double> weights;
  AdamState adam;
  /// Number of completed steps.
  std::size_t step = 0;
};

inline nlohmann::json to_json(const TrainState& s) {
  nlohmann::json j;
  j["format"] = "specinv-train-state";
  j["mode"] = to_string(s.weights.mode());
  j["step"] = s.step;
  j["adam_step"] = s.adam.step;
  for (std::size_t i = 0; i < s.weights.tensors().size(); ++i) {
    const auto& t = s.weights[i];
    j["weights"][t.name] = t.values;
    j["adam_m"][t.name] = s.adam.m.at(i);
    j["adam_v"][t.name] = s.adam.v.at(i);
  }
  return j;
}

inline TrainState train_state_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "specinv-train-state") throw IoError("train state: unrecognised format");
  const auto mode = j.at("mode").get<std::string>() == "strided" ? CnnMode::Strided : CnnMode::Full;
  TrainState s{CnnWeights<double>(mode), {}, j.at("step").get<std::size_t>()};
  s.adam.step = j.at("adam_step").get<std::size_t>();
  for (std::size_t i = 0; i < s.weights.tensors().size(); ++i) {
    auto& t = s.weights[i];
    auto vals = j.at("weights").at(t.name).get<std::vector<double>>();
    auto m = j.at("adam_m").at(t.name).get<std::vector<double>>();
    auto v = j.at("adam_v").at(t.name).get<std::vector<double>>();
    if (vals.size() != t.values.size() || m.size() != vals.size() || v.size() != vals.size())
      throw IoError("train state: size mismatch for " + t.name);
    t.values = std::move(vals);
    s.adam.m.push_back(std::move(m));
    s.adam.v.push_back(std::move(v));
  }
  return s;
}

inline void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  os << to_json(s).dump();
}

inline TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return train_state_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("train state: ") + e.what());
  }
}

/// Reads every *.wav in a directory (sorted by name). Unreadable files are
/// skipped with a warning on stderr.
inline std::vector<Waveform> load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".wav") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Waveform> out;
  for (const auto& f : files) {
    try {
      auto w = wav::read(f);
      if (w.samples.empty()) throw IoError("no samples");
      out.push_back(std::move(w));
    } catch (const std::exception& e) {
      std::cerr << "warning: skipping " << f.string() << ": " << e.what() << "\n";
    }
  }
  if (out.empty()) throw IoError("empty dataset: no readable WAV files in " + dir.string());
  return out;
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Draws the batch for one step. The draw depends only on (seed, step), which
/// makes a resumed run reproduce an uninterrupted one.
inline std::vector<Waveform> sample_batch(const std::vector<Waveform>& corpus, const TrainingConfig& cfg,
                                          std::size_t step) {
  std::uint64_t state = detail::mix64(cfg.seed ^ detail::mix64(step + 1));
  auto next = [&state] { return state = detail::mix64(state); };
  const auto seg = static_cast<std::size_t>(std::lround(cfg.segment_seconds * cfg.stft.sample_rate));
  std::vector<Waveform> batch;
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    const auto& clip = corpus[next() % corpus.size()];
    Waveform w{std::vector<double>(seg, 0.0), clip.sample_rate};
    const std::size_t span = clip.samples.size() > seg ? clip.samples.size() - seg + 1 : 1;
    const std::size_t start = next() % span;
    const std::size_t n = std::min(seg, clip.samples.size() - start);
    std::copy_n(clip.samples.begin() + static_cast<std::ptrdiff_t>(start), n, w.samples.begin());
    batch.push_back(std::move(w));
  }
  return batch;
}

struct TrainResult {
  TrainState state;
  std::vector<LossLogRow> log;
};

/// Supervised training on random segments. Deterministic given cfg.seed; when
/// `resume` is given training continues from its step count.
inline TrainResult train(const std::vector<Waveform>& corpus, const TrainingConfig& cfg,
                         const TrainState* resume = nullptr,
                         const std::function<void(const LossLogRow&)>& on_step = {}) {
  if (corpus.empty()) throw IoError("train: empty dataset");
  cfg.stft.validate();
  require(cfg.batch_size > 0 && cfg.segment_seconds > 0.0, "train: batch size and segment length must be positive");

  TrainResult res;
  if (resume) {
    if (resume->weights.mode() != cfg.mode) throw ConfigError("train: resume state mode differs from --mode");
    res.state = *resume;
  } else {
    res.state = {CnnWeights<double>::he_uniform(cfg.mode, cfg.seed), {}, 0};
    res.state.adam = AdamState::for_weights(res.state.weights);
  }
  auto& st = res.state;
  for (std::size_t step = st.step; step < cfg.steps; ++step) {
    const auto clips = sample_batch(corpus, cfg, step);
    std::vector<Tensor<double>> xs;
    std::vector<Targets<double>> ts;
    for (const auto& c : clips) {
      const auto spec = stft(c, cfg.stft);
      xs.push_back(to_input_tensor<double>(log_magnitude(spec).data));
      ts.push_back(extract_targets<double>(spec));
    }
    Targets<double> batch_targets;
    auto gather = [&](auto member) {
      std::vector<Tensor<double>> v;
      for (const auto& t : ts) v.push_back(t.*member);
      return stack_batch(v);
    };
    batch_targets.fpd = gather(&Targets<double>::fpd);
    batch_targets.bpd = gather(&Targets<double>::bpd);
    batch_targets.fpd_mask = gather(&Targets<double>::fpd_mask);
    batch_targets.bpd_mask = gather(&Targets<double>::bpd_mask);

    auto r = backward(stack_batch(xs), st.weights, batch_targets);
    const double lr = cfg.lr.at(step);
    optimizer_step(st.weights, r.grads, st.adam, lr, cfg.adam);
    update_running_stats(st.weights, r.trace);
    st.step = step + 1;

    LossLogRow row{step + 1, r.loss_fpd / static_cast<double>(std::max<std::size_t>(r.count_fpd, 1)),
                   r.loss_bpd / static_cast<double>(std::max<std::size_t>(r.count_bpd, 1)), lr};
    res.log.push_back(row);
    if (on_step) on_step(row);

    if (cfg.checkpoint_every > 0 && st.step % cfg.checkpoint_every == 0 && !cfg.checkpoint_path.empty()) {
      siw::save(cfg.checkpoint_path, st.weights);
      auto state_path = cfg.checkpoint_path;
      state_path += ".state.json";
      save_train_state(state_path, st);
    }
  }
  return res;
}

inline void write_loss_csv(std::ostream& os, const std::vector<LossLogRow>& rows, bool header = true) {
  if (header) os << "step,loss_fpd,loss_bpd,lr\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g\n", r.step, r.loss_fpd, r.loss_bpd, r.lr);
    os << buf;
  }
}

}  // namespace specinv
