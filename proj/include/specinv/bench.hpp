#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <functional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#if defined(__linux__)
#include <sched.h>
#endif

#include "specinv/cnn.hpp"
#include "specinv/solver.hpp"

namespace specinv::bench {

enum class Solver { Thomas, Dense, Iterative };

inline const char* to_string(Solver s) {
  switch (s) {
    case Solver::Thomas: return "thomas";
    case Solver::Dense: return "dense";
    case Solver::Iterative: return "iterative";
  }
  return "?";
}

struct BenchRecord {
  std::string solver;
  std::size_t n = 0;
  std::size_t runs = 0;
  double median_ns = 0.0;
  double p01_ns = 0.0;
  double p99_ns = 0.0;
  std::vector<double> samples_ns;
  /// FNV-1a hash of the timed system (empty for CNN records).
  std::uint64_t checksum = 0;
  /// Relative error against the dense oracle in the correctness pass (< 0 if
  /// not checked).
  double check_error = -1.0;
};

/// Linear-interpolation percentile, q in [0, 1].
inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

inline void summarize(BenchRecord& r) {
  r.runs = r.samples_ns.size();
  r.median_ns = percentile(r.samples_ns, 0.5);
  r.p01_ns = percentile(r.samples_ns, 0.01);
  r.p99_ns = percentile(r.samples_ns, 0.99);
}

/// Best effort: keep the measuring thread on one CPU.
inline bool pin_to_current_cpu() {
#if defined(__linux__)
  const int cpu = sched_getcpu();
  if (cpu < 0) return false;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  return sched_setaffinity(0, sizeof(set), &set) == 0;
#else
  return false;
#endif
}

/// Seeded system with standard complex Gaussian ratios and previous frame and
/// |standard normal| weights (they must be nonnegative).
inline TridiagonalHermitianSystem random_system(std::size_t n, std::uint64_t seed) {
  require(n >= 2, "random_system: n must be at least 2");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  ComplexRatios r{std::vector<cplx>(n - 1), std::vector<cplx>(n)};
  WeightFrame w{std::vector<double>(n), std::vector<double>(n - 1)};
  std::vector<cplx> prev(n);
  for (auto& v : r.u) v = {g(rng), g(rng)};
  for (auto& v : r.v) v = {g(rng), g(rng)};
  for (auto& v : w.lambda_w) v = std::abs(g(rng));
  for (auto& v : w.gamma_w) v = std::abs(g(rng));
  for (auto& v : prev) v = {g(rng), g(rng)};
  return build_system(r, prev, w);
}

inline std::uint64_t checksum(const TridiagonalHermitianSystem& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto eat = [&h](const void* p, std::size_t bytes) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ull;
    }
  };
  eat(s.diag.data(), s.diag.size() * sizeof(double));
  eat(s.lower.data(), s.lower.size() * sizeof(cplx));
  eat(s.upper.data(), s.upper.size() * sizeof(cplx));
  eat(s.rhs.data(), s.rhs.size() * sizeof(cplx));
  return h;
}

inline double relative_error(const std::vector<cplx>& x, const std::vector<cplx>& ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += std::norm(x[i] - ref[i]);
    den += std::norm(ref[i]);
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

struct SolverBenchConfig {
  std::vector<std::size_t> sizes;
  std::vector<Solver> solvers{Solver::Thomas, Solver::Dense, Solver::Iterative};
  std::size_t runs = 10;
  std::size_t warmup = 3;
  std::uint64_t seed = 0;
  /// Dense LU is skipped above this size.
  std::size_t dense_cap = 4096;
  double iterative_tol = 1e-8;
  /// A timed sample repeats the solve until at least this much time passed
  /// and reports the mean per solve; keeps microsecond solves above clock noise.
  double min_sample_ns = 2e5;
  /// Compare each solver with the dense oracle before timing (sizes <= cap).
  bool check = true;
};

namespace detail {

inline double now_ns() {
  using clock = std::chrono::steady_clock;
  return static_cast<double>(
      std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now().time_since_epoch()).count());
}

// Keeps the optimizer from discarding a solve whose result is unused.
inline volatile double g_sink = 0.0;

inline void time_into(BenchRecord& rec, std::size_t warmup, std::size_t runs, double min_sample_ns,
                      const std::function<double()>& fn) {
  for (std::size_t i = 0; i < warmup; ++i) g_sink = g_sink + fn();
  // calibrate repetitions per sample
  std::size_t reps = 1;
  {
    const double t0 = now_ns();
    g_sink = g_sink + fn();
    const double one = std::max(now_ns() - t0, 1.0);
    if (one < min_sample_ns) reps = static_cast<std::size_t>(std::ceil(min_sample_ns / one));
  }
  for (std::size_t r = 0; r < runs; ++r) {
    const double t0 = now_ns();
    for (std::size_t k = 0; k < reps; ++k) g_sink = g_sink + fn();
    rec.samples_ns.push_back((now_ns() - t0) / static_cast<double>(reps));
  }
  summarize(rec);
}

}  // namespace detail

inline std::vector<BenchRecord> bench_solvers(const SolverBenchConfig& cfg) {
  require(cfg.runs >= 1, "bench_solvers: runs must be positive");
  std::vector<BenchRecord> out;
  for (std::size_t n : cfg.sizes) {
    require(n >= 2, "bench_solvers: sizes must be at least 2");
    const auto sys = random_system(n, cfg.seed ^ (0x9E3779B97F4A7C15ull * n));
    const auto sum = checksum(sys);
    std::vector<cplx> oracle;
    if (cfg.check && n <= cfg.dense_cap) oracle = dense_solve_oracle(sys);
    for (Solver s : cfg.solvers) {
      if (s == Solver::Dense && n > cfg.dense_cap) continue;
      BenchRecord rec;
      rec.solver = to_string(s);
      rec.n = n;
      rec.checksum = sum;
      std::function<std::vector<cplx>()> solve;
      switch (s) {
        case Solver::Thomas: solve = [&] { return thomas_solve(sys); }; break;
        case Solver::Dense: solve = [&] { return dense_solve_oracle(sys); }; break;
        case Solver::Iterative: solve = [&] { return iterative_solve(sys, cfg.iterative_tol).x; }; break;
      }
      if (!oracle.empty()) rec.check_error = relative_error(solve(), oracle);
      detail::time_into(rec, cfg.warmup, cfg.runs, cfg.min_sample_ns, [&] { return solve()[n / 2].real(); });
      out.push_back(std::move(rec));
    }
  }
  return out;
}

inline void write_csv(std::ostream& os, const std::vector<BenchRecord>& recs, double iterative_tol) {
  char buf[200];
  std::snprintf(buf, sizeof(buf), "# iterative_tol=%.0e\n", iterative_tol);
  os << buf << "solver,n,runs,median_ns,p01_ns,p99_ns\n";
  for (const auto& r : recs) {
    std::snprintf(buf, sizeof(buf), "%s,%zu,%zu,%.1f,%.1f,%.1f\n", r.solver.c_str(), r.n, r.runs, r.median_ns,
                  r.p01_ns, r.p99_ns);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// CNN

/// Published size and cost of the earlier, larger phase-derivative network,
/// used only as comparison constants.
inline constexpr double kReferenceParams = 247.81e3;
inline constexpr double kReferenceGmacPerSecond = 7.95;

struct CnnBenchResult {
  BenchRecord timing;  // per frame
  CostReport cost;
  double params_ratio = 0.0;  // reference / ours
  double gmac_ratio = 0.0;
};

/// Times batch inference over `frames` frames of random log-magnitudes and
/// reports the per-frame wall time.
template <typename T>
CnnBenchResult bench_cnn(const CnnWeights<T>& w, std::size_t freq_bins, double frames_per_second,
                         std::size_t frames = 64, std::size_t runs = 10, std::uint64_t seed = 0,
                         std::size_t warmup = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(-3.0, 2.0);
  Tensor<T> x(1, 1, freq_bins, frames);
  for (auto& v : x.data) v = static_cast<T>(g(rng));
  CnnBenchResult r;
  r.timing.solver = std::string("cnn_") + to_string(w.mode());
  r.timing.n = freq_bins;
  detail::time_into(r.timing, warmup, runs, 0.0, [&] {
    const auto out = forward(x, w);
    return static_cast<double>(out.fpd.data[0]);
  });
  for (auto& s : r.timing.samples_ns) s /= static_cast<double>(frames);
  summarize(r.timing);
  r.cost = count_params_and_macs(w, freq_bins, frames_per_second);
  r.params_ratio = kReferenceParams / static_cast<double>(r.cost.params);
  r.gmac_ratio = kReferenceGmacPerSecond / r.cost.gmac_per_s;
  return r;
}

}  // namespace specinv::bench
