#include "hst/losses.hpp"

#include "hst/ops.hpp"

namespace hst {

using namespace ad;

void LossConfig::validate(std::size_t num_classes) const {
  require(alpha.size() == num_classes, "loss: alpha needs one entry per class");
  for (double a : alpha) require(a >= 0.0, "loss: alpha entries must be non-negative");
  require(gamma >= 0.0, "loss: gamma must be non-negative");
  require(lambda >= 0.0, "loss: lambda must be non-negative");
}

namespace {

void check_labels(const std::vector<int>& labels, std::size_t rows, std::size_t classes, const char* who) {
  if (labels.size() != rows)
    fail(ErrorKind::Shape, std::string(who) + ": " + std::to_string(labels.size()) + " labels for " +
                               std::to_string(rows) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      fail(ErrorKind::InvalidArgument, std::string(who) + ": invalid label " + std::to_string(y));
}

}  // namespace

Var focal_loss(Var logits, const std::vector<int>& labels, const LossConfig& cfg) {
  const Tensor& L = logits.value();
  if (L.ndim() != 2) fail(ErrorKind::Shape, "focal_loss: logits must be (B, C)");
  const std::size_t B = L.dim(0), C = L.dim(1);
  cfg.validate(C);
  check_labels(labels, B, C, "focal_loss");
  std::vector<std::size_t> picks(B);
  Tensor alpha({B});
  for (std::size_t i = 0; i < B; ++i) {
    picks[i] = i * C + static_cast<std::size_t>(labels[i]);
    alpha[i] = -cfg.alpha[static_cast<std::size_t>(labels[i])];
  }
  Var log_py = gather_elements(log_softmax_rows(logits), std::move(picks));
  Var per_sample = mul(log_py, logits.graph->constant(std::move(alpha)));
  if (cfg.gamma != 0.0) {
    // log_softmax <= 0 exactly, so 1 - p never goes negative
    Var one_minus = affine(exp(log_py), -1.0, 1.0);
    per_sample = mul(per_sample, pow_scalar(one_minus, cfg.gamma));
  }
  return mean_all(per_sample);
}

Var center_loss(Var features, const std::vector<int>& labels, Var centers) {
  const Tensor& V = features.value();
  const Tensor& Cn = centers.value();
  if (V.ndim() != 2 || Cn.ndim() != 2 || V.dim(1) != Cn.dim(1))
    fail(ErrorKind::Shape, "center_loss: features (B, d) and centers (C, d) must share d");
  check_labels(labels, V.dim(0), Cn.dim(0), "center_loss");
  std::vector<std::size_t> rows(labels.begin(), labels.end());
  Var diff = sub(features, gather_rows(centers, std::move(rows)));
  return affine(sum_all(mul(diff, diff)), 0.5, 0.0);
}

Var total_loss(Var logits, Var features, const std::vector<int>& labels, Var centers, const LossConfig& cfg) {
  Var focal = focal_loss(logits, labels, cfg);
  if (cfg.lambda == 0.0) return focal;
  return add(focal, affine(center_loss(features, labels, centers), cfg.lambda, 0.0));
}

}  // namespace hst
