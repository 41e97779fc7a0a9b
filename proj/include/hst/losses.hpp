#pragma once

#include <cstddef>
#include <vector>

#include "hst/autodiff.hpp"

namespace hst {

inline constexpr std::size_t kNumClasses = 3;  // normal, talking, yawning

struct LossConfig {
  std::vector<double> alpha = std::vector<double>(kNumClasses, 0.25);
  double gamma = 2.0;
  double lambda = 0.001;

  void validate(std::size_t num_classes) const;
};

// mean_i  -alpha_y (1 - p_y)^gamma log p_y  over logits (B, C).
ad::Var focal_loss(ad::Var logits, const std::vector<int>& labels, const LossConfig& cfg);

// 1/2 sum_i ||v_i - c_{y_i}||^2 over features (B, d) and centers (C, d); no 1/B.
ad::Var center_loss(ad::Var features, const std::vector<int>& labels, ad::Var centers);

// focal + lambda * center
ad::Var total_loss(ad::Var logits, ad::Var features, const std::vector<int>& labels, ad::Var centers,
                   const LossConfig& cfg);

}  // namespace hst
