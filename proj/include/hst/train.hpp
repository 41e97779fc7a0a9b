#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hst/losses.hpp"
#include "hst/model.hpp"

namespace hst {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch = 8;
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double center_lr = 0.5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossConfig loss;
  std::uint64_t seed = 42;
  std::size_t threads = 0;  // 0 = all cores

  void validate() const;
};

struct TrainState {
  ModelConfig model;
  ad::ParamSet params;
  Tensor centers;  // (num_classes, d_out)
  ad::ParamSet adam_m, adam_v;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  std::uint64_t shuffle_seed = 0;
};

TrainState init_model(const ModelConfig& cfg);

// Decoupled weight decay applies to weight matrices only: biases, norm
// parameters, edge weights, A_log and the centers are exempt.
bool decays(const std::string& param_name, const Tensor& value);

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<std::vector<std::size_t>> confusion;  // [truth][prediction]
};

// Macro-F1 over the confusion matrix; a class absent from both truth and
// predictions scores 0.
Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion);

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;
  double train_macro_f1 = 0.0;
  bool has_val = false;
  double val_accuracy = 0.0;
  double val_macro_f1 = 0.0;
  double min_edge_weight = 0.0;  // node degrees stay positive while this does
  double seconds = 0.0;          // wall time; not part of the deterministic log
};

std::string format_epoch(const EpochLog& log);

using EpochCallback = std::function<void(const EpochLog&)>;

// Mini-batch training. Clips of one batch are evaluated on separate graphs
// (optionally in parallel) and their gradients summed in clip order.
std::vector<EpochLog> train(TrainState& state, const std::vector<ClipInput>& train_set,
                            const std::vector<ClipInput>* val_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch = {});

struct Prediction {
  int label = 0;
  Tensor logits;
  Tensor probabilities;
  Tensor feature;
  Tensor alphas;
  SaliencyRecord saliency;
};

Prediction predict(const ClipInput& clip, const TrainState& state);
Metrics evaluate(const std::vector<ClipInput>& split, const TrainState& state, std::size_t threads = 0);

}  // namespace hst
