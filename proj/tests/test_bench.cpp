#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "hst/bench.hpp"
#include "hst/error.hpp"
#include "test_util.hpp"

using namespace hst;
using hst::testing::random_tensor;

namespace {

// softmax(QK^T / sqrt(d)) V with plain loops.
std::vector<std::vector<double>> attention_oracle(const Tensor& z, const AttentionBaseline& a) {
  const std::size_t T = z.rows(), d = z.cols();
  auto proj = [&](const Tensor& W) {
    std::vector<std::vector<double>> out(T, std::vector<double>(d, 0.0));
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = 0; k < d; ++k) out[t][j] += z.at(t, k) * W.at(k, j);
    return out;
  };
  const auto q = proj(a.Wq), k = proj(a.Wk), v = proj(a.Wv);
  std::vector<std::vector<double>> out(T, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < T; ++i) {
    std::vector<double> w(T);
    double total = 0.0;
    for (std::size_t j = 0; j < T; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) s += q[i][c] * k[j][c];
      w[j] = std::exp(s / std::sqrt(static_cast<double>(d)));
      total += w[j];
    }
    for (std::size_t j = 0; j < T; ++j)
      for (std::size_t c = 0; c < d; ++c) out[i][c] += w[j] / total * v[j][c];
  }
  return out;
}

}  // namespace

TEST(Slope, ExactFits) {
  EXPECT_NEAR(fit_loglog_slope({1, 2, 4}, {1, 2, 4}), 1.0, 1e-15);
  EXPECT_NEAR(fit_loglog_slope({1, 2, 4}, {1, 4, 16}), 2.0, 1e-15);
  EXPECT_NEAR(fit_loglog_slope({1, 2, 4}, {3, 3, 3}), 0.0, 1e-15);
  std::vector<double> xs{512, 1024, 2048, 4096, 8192}, lin, quad;
  for (double x : xs) {
    lin.push_back(3e-6 * x);
    quad.push_back(1e-9 * x * x);
  }
  EXPECT_NEAR(fit_loglog_slope(xs, lin), 1.0, 1e-12);
  EXPECT_NEAR(fit_loglog_slope(xs, quad), 2.0, 1e-12);
}

TEST(Slope, Errors) {
  EXPECT_THROW(fit_loglog_slope({1}, {1}), Error);
  EXPECT_THROW(fit_loglog_slope({1, 2}, {1}), Error);
  EXPECT_THROW(fit_loglog_slope({1, 2}, {0, 1}), Error);
  EXPECT_THROW(fit_loglog_slope({2, 2}, {1, 3}), Error);
}

TEST(Attention, SingleStepReturnsValueRow) {
  std::mt19937_64 rng(1);
  const auto a = AttentionBaseline::init(6, 3);
  const Tensor z = random_tensor({1, 6}, rng);
  const Tensor out = attention_baseline_forward(z, a);
  for (std::size_t j = 0; j < 6; ++j) {
    double v = 0.0;
    for (std::size_t k = 0; k < 6; ++k) v += z[k] * a.Wv.at(k, j);
    EXPECT_NEAR(out[j], v, 1e-14);
  }
}

TEST(Attention, UniformRowsGiveIdenticalOutputs) {
  const auto a = AttentionBaseline::init(4, 5);
  Tensor z({7, 4});
  for (std::size_t t = 0; t < 7; ++t)
    for (std::size_t c = 0; c < 4; ++c) z.at(t, c) = 0.1 * static_cast<double>(c + 1);
  const Tensor out = attention_baseline_forward(z, a);
  for (std::size_t t = 1; t < 7; ++t)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(out.at(t, c), out.at(0, c));
}

TEST(Attention, MatchesDenseOracle) {
  std::mt19937_64 rng(2);
  for (std::size_t T : {1u, 4u, 9u}) {
    const auto a = AttentionBaseline::init(5, T);
    const Tensor z = random_tensor({T, 5}, rng);
    const Tensor out = attention_baseline_forward(z, a);
    const auto want = attention_oracle(z, a);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(out.at(t, c), want[t][c], 1e-12);
  }
}

TEST(Flops, ScaleAsExpected) {
  EXPECT_NEAR(attention_flops(2048, 64) / attention_flops(1024, 64), 4.0, 0.3);
  EXPECT_DOUBLE_EQ(bimamba_flops(2048, 64, 16) / bimamba_flops(1024, 64, 16), 2.0);
  // projections 3*2*T*d^2, scores and values 2*2*T^2*d, softmax 5*T^2
  EXPECT_DOUBLE_EQ(attention_flops(10, 4), 3 * 2 * 10 * 16 + 4 * 100 * 4 + 5 * 100);
}

TEST(Scaling, ValidatesConfig) {
  BenchConfig cfg;
  cfg.lengths = {64, 128};
  EXPECT_THROW(run_scaling(cfg), Error);
  cfg.lengths = {64, 128, 256};  // spans only 4x
  EXPECT_THROW(run_scaling(cfg), Error);
  cfg.lengths = {64, 32, 512};
  EXPECT_THROW(run_scaling(cfg), Error);
  cfg.lengths = {32, 64, 256};
  cfg.repeats = 4;
  EXPECT_THROW(run_scaling(cfg), Error);
}

TEST(Scaling, SmallRunReportsEverything) {
  BenchConfig cfg;
  cfg.lengths = {32, 64, 128, 256};
  cfg.d_out = 8;
  cfg.n = 4;
  const auto r = run_scaling(cfg);
  ASSERT_EQ(r.methods.size(), 2u);
  EXPECT_EQ(r.methods[0].method, "bimamba");
  EXPECT_EQ(r.methods[1].method, "attention");
  for (const auto& m : r.methods) {
    ASSERT_EQ(m.seconds.size(), 4u);
    for (double s : m.seconds) EXPECT_GT(s, 0.0);
    for (double b : m.peak_bytes) EXPECT_GT(b, 0.0);
  }
  // the attention score matrix alone is T*T doubles
  EXPECT_GE(r.methods[1].peak_bytes.back(), 256.0 * 256.0 * 8.0);
  EXPECT_GT(r.methods[1].memory_slope, r.methods[0].memory_slope);
  const std::string csv = bench_csv(r);
  EXPECT_EQ(csv.rfind("method,T,median_seconds,peak_bytes,analytic_flops\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 9);
}
