#include "hst/pooling.hpp"

#include "hst/ops.hpp"

namespace hst {

using namespace ad;

AttentionPooled attention_pool_frames(Var x, std::size_t frames, const AttentionParams& params) {
  const Tensor& X = x.value();
  if (X.ndim() != 2 || frames == 0 || X.dim(0) % frames != 0)
    fail(ErrorKind::Shape, "attention_pool: rows must split evenly into frames, got " + shape_str(X.shape()));
  if (params.W_a.value().ndim() != 2 || params.W_a.value().dim(0) != X.dim(1))
    fail(ErrorKind::Shape, "attention_pool: W_a must be (d_out, d_a)");
  const std::size_t nodes = X.dim(0) / frames;
  Var hidden = tanh(add_row(matmul(x, params.W_a), params.b_a));
  Var scores = reshape(matmul(hidden, params.w_a), {frames, nodes});
  Var alphas = softmax_rows(scores);
  return {weighted_row_sum(alphas, x), alphas};
}

AttentionPooled attention_pool(Var x_geo, const AttentionParams& params) {
  auto pooled = attention_pool_frames(x_geo, 1, params);
  return {reshape(pooled.z, {x_geo.value().dim(1)}), reshape(pooled.alphas, {x_geo.value().dim(0)})};
}

SaliencyRecord saliency_from(const Tensor& y_bi) {
  const std::size_t T = y_bi.rows(), C = y_bi.cols();
  SaliencyRecord s;
  s.argmax = argmax_over_rows(y_bi);
  s.density.assign(T, 0.0);
  for (auto t : s.argmax) s.density[t] += 1.0;
  for (auto& d : s.density) d /= static_cast<double>(C);
  return s;
}

TemporalPooled temporal_max_pool(Var y_bi) {
  if (y_bi.value().ndim() != 2) fail(ErrorKind::Shape, "temporal_max_pool: expected (T, d_out)");
  return {max_over_rows(y_bi), saliency_from(y_bi.value())};
}

}  // namespace hst
