// Separate binary: replaces global operator new to count heap traffic.
#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <new>
#include <random>

#include "specinv/solver.hpp"

namespace {
std::atomic<bool> g_tracking{false};
std::atomic<std::size_t> g_count{0}, g_bytes{0}, g_largest{0};
}  // namespace

void* operator new(std::size_t n) {
  if (g_tracking.load(std::memory_order_relaxed)) {
    g_count.fetch_add(1, std::memory_order_relaxed);
    g_bytes.fetch_add(n, std::memory_order_relaxed);
    std::size_t prev = g_largest.load(std::memory_order_relaxed);
    while (n > prev && !g_largest.compare_exchange_weak(prev, n)) {
    }
  }
  if (void* p = std::malloc(n ? n : 1)) return p;
  throw std::bad_alloc();
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

using namespace specinv;

TEST(ThomasMemory, LinearHeapUsage) {
  for (std::size_t n : {2u, 513u, 4097u}) {
    std::mt19937_64 rng(n);
    std::normal_distribution<double> g(0.0, 1.0);
    ComplexRatios r{std::vector<cplx>(n - 1), std::vector<cplx>(n)};
    WeightFrame w{std::vector<double>(n), std::vector<double>(n - 1)};
    std::vector<cplx> prev(n);
    for (auto& v : r.u) v = {g(rng), g(rng)};
    for (auto& v : r.v) v = {g(rng), g(rng)};
    for (auto& v : w.lambda_w) v = std::abs(g(rng));
    for (auto& v : w.gamma_w) v = std::abs(g(rng));
    for (auto& v : prev) v = {g(rng), g(rng)};
    const auto sys = build_system(r, prev, w);

    g_count = 0;
    g_bytes = 0;
    g_largest = 0;
    g_tracking = true;
    const auto x = thomas_solve(sys);
    g_tracking = false;

    EXPECT_EQ(x.size(), n);
    // two length-n complex buffers, nothing else
    EXPECT_LE(g_count.load(), 2u) << "n=" << n;
    EXPECT_LE(g_bytes.load(), 2 * n * sizeof(cplx)) << "n=" << n;
    EXPECT_LE(g_largest.load(), n * sizeof(cplx)) << "n=" << n;
  }
}
