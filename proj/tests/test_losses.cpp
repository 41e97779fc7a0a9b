#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hst/error.hpp"
#include "hst/losses.hpp"
#include "oracles.hpp"

using namespace hst;
using hst::testing::cross_entropy;
using hst::testing::random_tensor;

namespace {

double run_focal(const Tensor& logits, const std::vector<int>& labels, const LossConfig& cfg) {
  ad::Graph g;
  return focal_loss(g.constant(logits), labels, cfg).value()[0];
}

}  // namespace

TEST(Focal, DefaultHyperparametersHandCase) {
  // logits (ln 6, 0, 0): p_y = 6 / 8 = 0.75
  LossConfig cfg;
  const double loss = run_focal(Tensor({1, 3}, {std::log(6.0), 0.0, 0.0}), {0}, cfg);
  EXPECT_NEAR(loss, 0.0044950, 1e-7);
  EXPECT_NEAR(loss, -0.25 * 0.0625 * std::log(0.75), 1e-15);
}

TEST(Focal, ReducesToCrossEntropy) {
  std::mt19937_64 rng(3);
  LossConfig cfg;
  cfg.gamma = 0.0;
  cfg.alpha = {1.0, 1.0, 1.0};
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t B = 1 + trial % 9;
    const Tensor logits = random_tensor({B, 3}, rng, -6, 6);
    std::vector<int> labels;
    for (std::size_t i = 0; i < B; ++i) labels.push_back(static_cast<int>(rng() % 3));
    EXPECT_NEAR(run_focal(logits, labels, cfg), cross_entropy(logits, labels), 1e-12);
  }
}

TEST(Focal, PerfectPredictionsApproachZero) {
  LossConfig cfg;
  EXPECT_LT(run_focal(Tensor({2, 3}, {40, 0, 0, 0, 0, 40}), {0, 2}, cfg), 1e-30);
}

TEST(Focal, ClassWeightsApply) {
  LossConfig cfg;
  cfg.alpha = {0.5, 2.0, 1.0};
  cfg.gamma = 0.0;
  const Tensor logits({1, 3}, {0.3, -0.2, 0.9});
  EXPECT_NEAR(run_focal(logits, {1}, cfg), 2.0 * cross_entropy(logits, {1}), 1e-14);
}

TEST(Focal, Errors) {
  LossConfig cfg;
  EXPECT_THROW(run_focal(Tensor({1, 3}), {3}, cfg), Error);
  EXPECT_THROW(run_focal(Tensor({2, 3}), {0}, cfg), Error);
  LossConfig bad;
  bad.gamma = -1.0;
  EXPECT_THROW(bad.validate(3), Error);
  bad = LossConfig{};
  bad.alpha = {0.25, 0.25};
  EXPECT_THROW(bad.validate(3), Error);
}

TEST(Center, ZeroIffFeaturesEqualCenters) {
  std::mt19937_64 rng(5);
  const Tensor centers = random_tensor({3, 4}, rng);
  const std::vector<int> labels{2, 0, 2};
  Tensor feats({3, 4});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) feats.at(i, k) = centers.at(static_cast<std::size_t>(labels[i]), k);
  ad::Graph g;
  EXPECT_EQ(center_loss(g.constant(feats), labels, g.constant(centers)).value()[0], 0.0);
  feats.at(1, 3) += 0.5;
  EXPECT_NEAR(center_loss(g.constant(feats), labels, g.constant(centers)).value()[0], 0.125, 1e-15);
}

TEST(Center, HandValueAndGradients) {
  const Tensor feats({2, 2}, {1, 2, 3, 4}), centers({2, 2}, {0, 0, 1, 1});
  ad::Graph g;
  auto f = g.parameter("f", feats);
  auto c = g.parameter("c", centers);
  auto loss = center_loss(f, {0, 1}, c);
  // 1/2 (1 + 4) + 1/2 (4 + 9)
  EXPECT_NEAR(loss.value()[0], 9.0, 1e-15);
  const auto grads = g.backward(loss);
  EXPECT_EQ(grads.at("f"), Tensor({2, 2}, {1, 2, 2, 3}));
  EXPECT_EQ(grads.at("c"), Tensor({2, 2}, {-1, -2, -2, -3}));
}

TEST(Total, CombinesWithLambda) {
  std::mt19937_64 rng(6);
  const Tensor logits = random_tensor({4, 3}, rng), feats = random_tensor({4, 5}, rng), centers = random_tensor({3, 5}, rng);
  const std::vector<int> labels{0, 1, 2, 1};
  LossConfig cfg;
  cfg.lambda = 0.3;
  ad::Graph g;
  const double focal = focal_loss(g.constant(logits), labels, cfg).value()[0];
  const double center = center_loss(g.constant(feats), labels, g.constant(centers)).value()[0];
  const double total = total_loss(g.constant(logits), g.constant(feats), labels, g.constant(centers), cfg).value()[0];
  EXPECT_NEAR(total, focal + 0.3 * center, 1e-14);
}

TEST(Total, GradientsPassFiniteDifferences) {
  std::mt19937_64 rng(7);
  ad::ParamSet p{{"logits", random_tensor({5, 3}, rng, -2, 2)},
                 {"features", random_tensor({5, 4}, rng)},
                 {"centers", random_tensor({3, 4}, rng)}};
  const std::vector<int> labels{0, 2, 1, 1, 0};
  LossConfig cfg;
  cfg.lambda = 0.5;
  auto build = [&](ad::Graph& g, const ad::ParamSet& q) {
    return total_loss(g.parameter("logits", q.at("logits")), g.parameter("features", q.at("features")), labels,
                      g.parameter("centers", q.at("centers")), cfg);
  };
  const auto r = ad::check_gradients(build, p, 1e-5, 1e-4);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
