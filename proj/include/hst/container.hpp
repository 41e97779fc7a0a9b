#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/encoders.hpp"

namespace hst {

enum class TextureMode : std::uint8_t { Patches = 0, Embeddings = 1 };

inline constexpr std::uint32_t kContainerVersion = 1;
inline constexpr std::size_t kPatchBytes = kPatchSize * kPatchSize * kPatchChannels;

// One raw clip of N frames. Exactly one of patches/embeddings is populated,
// matching the container's texture mode.
struct Sequence {
  int label = 0;
  std::uint32_t subject = 0;
  std::uint32_t frames = 0;
  std::vector<float> landmarks;       // N * 68 * 3
  std::vector<std::uint8_t> patches;  // N * 3 * 32 * 32 * 3
  std::vector<float> embeddings;      // N * 3 * d_tex

  Points frame_points(std::size_t frame) const;
  TexturePatch patch(std::size_t frame, std::size_t region) const;
  bool operator==(const Sequence&) const = default;
};

struct Container {
  TextureMode mode = TextureMode::Embeddings;
  std::uint32_t d_tex = 0;  // embeddings only
  std::vector<Sequence> sequences;
  bool operator==(const Container&) const = default;
};

// Checks payload sizes against frame counts and the texture mode.
void validate_container(const Container& data);

std::vector<std::uint8_t> encode_container(const Container& data);
Container decode_container(std::span<const std::uint8_t> bytes);
void write_container(const std::string& path, const Container& data);
Container read_container(const std::string& path);

}  // namespace hst
