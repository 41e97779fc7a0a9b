#pragma once

#include <cstddef>
#include <vector>

#include "hst/autodiff.hpp"

namespace hst {

struct AttentionParams {
  ad::Var W_a;  // (d_out, d_a)
  ad::Var b_a;  // (d_a)
  ad::Var w_a;  // (d_a, 1)
};

struct AttentionPooled {
  ad::Var z;       // (d_out) for one frame, (F, d_out) for a batch
  ad::Var alphas;  // (68) for one frame, (F, 68) for a batch
};

// e_i = w_a^T tanh(W_a^T x_i + b_a), alpha = softmax(e), z = sum_i alpha_i x_i.
AttentionPooled attention_pool(ad::Var x_geo, const AttentionParams& params);
// Same for F frames stacked as (F * nodes_per_frame, d_out).
AttentionPooled attention_pool_frames(ad::Var x, std::size_t frames, const AttentionParams& params);

struct SaliencyRecord {
  std::vector<std::size_t> argmax;  // per channel, first maximal frame
  std::vector<double> density;      // per frame, argmax counts / channels
};

SaliencyRecord saliency_from(const Tensor& y_bi);

struct TemporalPooled {
  ad::Var v;  // (d_out)
  SaliencyRecord saliency;
};

TemporalPooled temporal_max_pool(ad::Var y_bi);

}  // namespace hst
