#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/autodiff.hpp"
#include "hst/container.hpp"
#include "hst/hypergraph.hpp"
#include "hst/pooling.hpp"

namespace hst {

enum class TemporalMode : std::uint8_t { BiMamba = 0, MaxPool = 1 };

struct ModelConfig {
  std::size_t T = 128;
  std::size_t K = 4;
  std::size_t d = 32;
  std::size_t d_out = 64;
  std::size_t d_a = 32;
  std::size_t n = 16;
  std::size_t depth = 1;
  std::size_t num_classes = 3;
  std::uint64_t seed = 42;
  TemporalMode temporal = TemporalMode::BiMamba;
  // Raw patches run the whole Micro-CNN; embeddings start after its frozen trunk.
  TextureMode texture = TextureMode::Patches;
  std::size_t d_tex = kTrunkWidth;

  void validate() const;
};

// Deterministic seeded initialization of every trainable tensor.
ad::ParamSet init_params(const ModelConfig& cfg);

struct ParamGroup {
  std::string name;
  std::size_t count;
};

// Closed-form per-group counts derived from the config alone.
std::vector<ParamGroup> param_groups(const ModelConfig& cfg);
std::size_t expected_param_count(const ModelConfig& cfg);
std::size_t count_params(const ad::ParamSet& params);

// One clip reduced to what the network consumes: T sampled frames, aligned,
// with their per-frame topology.
struct ClipInput {
  Tensor geo;                        // (T*68, 3) canonical coordinates
  std::vector<Incidence> topology;   // T incidences
  Tensor texture;                    // (T*3, d_tex) embeddings or (T*3, 3, 32, 32) images
  int label = -1;
};

// Samples T frames, aligns them to `tmpl` and builds the K-NN topology.
ClipInput prepare_clip(const Sequence& seq, TextureMode mode, std::size_t d_tex, const ModelConfig& cfg,
                       const CanonicalTemplate& tmpl);
std::vector<ClipInput> prepare_clips(const Container& data, const std::vector<std::size_t>& indices,
                                     const ModelConfig& cfg, const CanonicalTemplate& tmpl, std::size_t threads = 0);

struct ClipOutput {
  ad::Var logits;   // (num_classes)
  ad::Var feature;  // (d_out), v_final
  Tensor alphas;    // (T, 68)
  SaliencyRecord saliency;
};

// Registers every tensor of `params` as a graph parameter and runs the whole
// pipeline: hyperconv -> attention pool -> temporal engine -> max pool -> head.
ClipOutput forward_clip(ad::Graph& g, const ClipInput& clip, const ad::ParamSet& params, const ModelConfig& cfg);

}  // namespace hst
