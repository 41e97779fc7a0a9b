#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hst/tensor.hpp"

namespace hst {

// Single-head softmax(Q K^T / sqrt(d)) V with its own projections. Builds the
// full T x T score matrix on purpose.
struct AttentionBaseline {
  Tensor Wq, Wk, Wv;  // (d, d)
  static AttentionBaseline init(std::size_t d, std::uint64_t seed);
};

Tensor attention_baseline_forward(const Tensor& z, const AttentionBaseline& attn);

// Closed-form operation counts (multiply and add counted separately).
double attention_flops(std::size_t T, std::size_t d);
double bimamba_flops(std::size_t T, std::size_t d, std::size_t n);

// OLS slope of ln(ys) on ln(xs).
double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys);

struct MethodTiming {
  std::string method;
  std::vector<double> seconds;    // median per length
  std::vector<double> peak_bytes;  // allocation peak above the pre-run baseline
  std::vector<double> flops;
  double slope = 0.0;
  double memory_slope = 0.0;
};

struct BenchResult {
  std::vector<std::size_t> lengths;
  std::vector<MethodTiming> methods;  // "bimamba", "attention"
};

struct BenchConfig {
  std::vector<std::size_t> lengths{512, 1024, 2048, 4096, 8192};
  std::size_t d_out = 64;
  std::size_t n = 16;
  std::size_t repeats = 5;
  std::uint64_t seed = 42;
};

// Median of `repeats` timed runs after one warm-up per length and method, on
// the same seeded input for both methods.
BenchResult run_scaling(const BenchConfig& cfg);

std::string bench_csv(const BenchResult& r);

}  // namespace hst
