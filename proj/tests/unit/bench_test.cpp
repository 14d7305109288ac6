#include <gtest/gtest.h>

#include <sstream>

#include "helpers.hpp"

using namespace specinv;
using namespace specinv::bench;

TEST(Percentile, LinearInterpolation) {
  EXPECT_EQ(percentile({}, 0.5), 0.0);
  EXPECT_EQ(percentile({3.0}, 0.99), 3.0);
  EXPECT_EQ(percentile({4.0, 1.0, 3.0, 2.0}, 0.5), 2.5);
  EXPECT_EQ(percentile({0.0, 10.0}, 0.25), 2.5);
  EXPECT_EQ(percentile({5.0, 1.0, 9.0}, 0.0), 1.0);
  EXPECT_EQ(percentile({5.0, 1.0, 9.0}, 1.0), 9.0);
}

TEST(Systems, SeededAndNonnegative) {
  const auto a = random_system(64, 5), b = random_system(64, 5);
  EXPECT_EQ(checksum(a), checksum(b));
  EXPECT_NE(checksum(a), checksum(random_system(64, 6)));
  for (double d : a.diag) EXPECT_GT(d, 0.0);
  EXPECT_THROW(random_system(1, 0), std::invalid_argument);
}

TEST(SolverBench, BookkeepingAndCorrectness) {
  SolverBenchConfig cfg;
  cfg.sizes = {16, 65, 129};
  cfg.dense_cap = 65;
  cfg.min_sample_ns = 1e4;
  const auto recs = bench_solvers(cfg);
  // dense absent above the cap
  ASSERT_EQ(recs.size(), 3u * 3u - 1u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.runs, 10u);
    EXPECT_EQ(r.samples_ns.size(), 10u);
    EXPECT_LE(r.p01_ns, r.median_ns);
    EXPECT_LE(r.median_ns, r.p99_ns);
    EXPECT_GT(r.median_ns, 0.0);
    if (r.n <= 65)
      EXPECT_LT(r.check_error, 1e-6) << r.solver << " " << r.n;
    else
      EXPECT_LT(r.check_error, 0.0);
    EXPECT_FALSE(r.solver == "dense" && r.n > 65);
  }
  const auto again = bench_solvers(cfg);
  for (std::size_t i = 0; i < recs.size(); ++i) EXPECT_EQ(recs[i].checksum, again[i].checksum);
}

TEST(SolverBench, CsvLayout) {
  BenchRecord r{"thomas", 513, 10, 1500.0, 1400.0, 1900.25, {}, 0, -1.0};
  std::ostringstream os;
  write_csv(os, {r, r}, 1e-8);
  EXPECT_EQ(os.str(),
            "# iterative_tol=1e-08\nsolver,n,runs,median_ns,p01_ns,p99_ns\n"
            "thomas,513,10,1500.0,1400.0,1900.2\nthomas,513,10,1500.0,1400.0,1900.2\n");
}

TEST(CnnBench, CostAndRatios) {
  const auto w = CnnWeights<float>::he_uniform(CnnMode::Full, 1);
  const auto r = bench_cnn(w, 33, 62.5, 8, 10);
  EXPECT_EQ(r.timing.runs, 10u);
  EXPECT_LE(r.timing.p01_ns, r.timing.median_ns);
  EXPECT_LE(r.timing.median_ns, r.timing.p99_ns);
  EXPECT_EQ(r.cost.params, 8524u);
  EXPECT_NEAR(kReferenceParams / 8.46e3, 29.3, 0.05);
  EXPECT_NEAR(r.params_ratio, kReferenceParams / 8524.0, 1e-12);
  EXPECT_EQ(r.timing.solver, "cnn_full");
}
