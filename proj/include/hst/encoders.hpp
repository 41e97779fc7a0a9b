#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/autodiff.hpp"

namespace hst {

inline constexpr std::size_t kPatchSize = 32;
inline constexpr std::size_t kPatchChannels = 3;
inline constexpr std::size_t kNumRegions = 3;  // left eye, right eye, mouth
inline constexpr std::size_t kCnnConv1 = 8;
inline constexpr std::size_t kCnnConv2 = 16;
// Width of the Micro-CNN trunk output (after global average pooling).
inline constexpr std::size_t kTrunkWidth = kCnnConv2;

// 32x32 RGB, row-major HWC.
struct TexturePatch {
  std::array<std::uint8_t, kPatchSize * kPatchSize * kPatchChannels> pixels{};

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * kPatchSize + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * kPatchSize + x) * 3 + c]; }
  bool operator==(const TexturePatch&) const = default;
};

// Graph handles for the geometry projection (3 -> d).
struct GeoProjection {
  ad::Var weight;  // (3, d)
  ad::Var bias;    // (d)
};

// conv3x3(3->8) -> LeakyReLU -> maxpool2 -> conv3x3(8->16) -> LeakyReLU -> GAP -> linear(16->d)
struct MicroCnn {
  ad::Var conv1_w, conv1_b;  // (8,3,3,3), (8)
  ad::Var conv2_w, conv2_b;  // (16,8,3,3), (16)
  ad::Var fc_w, fc_b;        // (16,d), (d)
};

struct NodeFeatures {
  ad::Var geo;  // (68, d)
  ad::Var tex;  // (3, d)
};

// Pixels scaled to [0,1], stacked into (N,3,32,32).
Tensor patches_to_tensor(const std::vector<TexturePatch>& patches);

ad::Var project_geo(ad::Var aligned, const GeoProjection& proj);
ad::Var project_geo(ad::Graph& g, const Points& aligned, const GeoProjection& proj);

// Convolutional trunk only: (N,3,32,32) -> (N,16).
ad::Var cnn_trunk(ad::Var images, const MicroCnn& cnn);
// Full encoder: (N,3,32,32) -> (N,d).
ad::Var encode_patches(ad::Var images, const MicroCnn& cnn);
ad::Var encode_patch(ad::Graph& g, const TexturePatch& patch, const MicroCnn& cnn);

// Patches must be ordered (left eye, right eye, mouth).
NodeFeatures build_node_features(ad::Graph& g, const Points& aligned, const std::vector<TexturePatch>& patches,
                                 const GeoProjection& proj, const MicroCnn& cnn);

// Fixed trunk weights used to precompute texture embeddings (container texture
// mode 1). Seeded from a library constant so writer and reader always agree.
struct FrozenTrunk {
  Tensor conv1_w, conv1_b, conv2_w, conv2_b;
  static const FrozenTrunk& instance();
};

// (N,16) embeddings of `patches` under the frozen trunk.
Tensor frozen_trunk_embeddings(const std::vector<TexturePatch>& patches);

}  // namespace hst
