#include "hst/container.hpp"

#include "binary_io.hpp"
#include "hst/losses.hpp"

namespace hst {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'T', 'D'};
constexpr std::size_t kFrameFloats = kNumLandmarks * 3;

std::size_t texture_len(const Container& c, std::size_t frames) {
  return c.mode == TextureMode::Patches ? frames * kNumRegions * kPatchBytes : frames * kNumRegions * c.d_tex;
}

}  // namespace

Points Sequence::frame_points(std::size_t frame) const {
  require(frame < frames, "sequence: frame index out of range");
  Points p(kNumLandmarks, 3);
  const float* src = landmarks.data() + frame * kFrameFloats;
  for (std::size_t i = 0; i < kFrameFloats; ++i) p.data()[i] = src[i];
  return p;
}

TexturePatch Sequence::patch(std::size_t frame, std::size_t region) const {
  require(frame < frames && region < kNumRegions, "sequence: patch index out of range");
  require(patches.size() == static_cast<std::size_t>(frames) * kNumRegions * kPatchBytes, "sequence: no raw patches");
  TexturePatch p;
  const auto* src = patches.data() + (frame * kNumRegions + region) * kPatchBytes;
  std::copy(src, src + kPatchBytes, p.pixels.begin());
  return p;
}

void validate_container(const Container& c) {
  require(c.mode == TextureMode::Patches || c.mode == TextureMode::Embeddings, "container: unknown texture mode");
  if (c.mode == TextureMode::Embeddings) require(c.d_tex > 0, "container: embedding width must be positive");
  for (std::size_t i = 0; i < c.sequences.size(); ++i) {
    const Sequence& s = c.sequences[i];
    const std::string at = "container: sequence " + std::to_string(i) + ": ";
    if (s.label < 0 || s.label >= static_cast<int>(kNumClasses)) fail(ErrorKind::InvalidArgument, at + "label out of range");
    if (s.frames == 0) fail(ErrorKind::InvalidArgument, at + "no frames");
    if (s.landmarks.size() != s.frames * kFrameFloats) fail(ErrorKind::Shape, at + "landmark payload size mismatch");
    const std::size_t tex = c.mode == TextureMode::Patches ? s.patches.size() : s.embeddings.size();
    const std::size_t other = c.mode == TextureMode::Patches ? s.embeddings.size() : s.patches.size();
    if (tex != texture_len(c, s.frames) || other != 0) fail(ErrorKind::Shape, at + "texture payload size mismatch");
  }
}

std::vector<std::uint8_t> encode_container(const Container& c) {
  validate_container(c);
  io::ByteWriter w;
  w.text(std::string(kMagic, 4));
  w.u32(kContainerVersion);
  w.u8(static_cast<std::uint8_t>(c.mode));
  if (c.mode == TextureMode::Embeddings) w.u32(c.d_tex);
  w.u32(static_cast<std::uint32_t>(c.sequences.size()));
  for (const Sequence& s : c.sequences) {
    w.u8(static_cast<std::uint8_t>(s.label));
    w.u32(s.subject);
    w.u32(s.frames);
    for (float v : s.landmarks) w.f32(v);
    if (c.mode == TextureMode::Patches)
      w.bytes(s.patches);
    else
      for (float v : s.embeddings) w.f32(v);
  }
  return std::move(w.buffer());
}

Container decode_container(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.set_context("header");
  if (bytes.size() < 4 || r.text(4) != std::string(kMagic, 4)) fail(ErrorKind::Format, "not a dataset container");
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion)
    fail(ErrorKind::Format, "unsupported container version " + std::to_string(version));
  Container c;
  const std::uint8_t mode = r.u8();
  if (mode > 1) fail(ErrorKind::Format, "unknown texture mode " + std::to_string(mode));
  c.mode = static_cast<TextureMode>(mode);
  if (c.mode == TextureMode::Embeddings) {
    c.d_tex = r.u32();
    if (c.d_tex == 0) fail(ErrorKind::Format, "embedding width is zero");
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("sequence " + std::to_string(i));
    Sequence s;
    s.label = r.u8();
    s.subject = r.u32();
    s.frames = r.u32();
    if (s.label >= static_cast<int>(kNumClasses))
      fail(ErrorKind::Format, "sequence " + std::to_string(i) + " has invalid label " + std::to_string(s.label));
    if (s.frames == 0) fail(ErrorKind::Format, "sequence " + std::to_string(i) + " has no frames");
    // Guard against absurd lengths before allocating.
    const std::size_t need = s.frames * kFrameFloats * 4 + texture_len(c, s.frames) * (c.mode == TextureMode::Patches ? 1 : 4);
    if (need > r.remaining()) fail(ErrorKind::Format, "truncated file (sequence " + std::to_string(i) + ")");
    s.landmarks.resize(s.frames * kFrameFloats);
    for (auto& v : s.landmarks) v = r.f32();
    if (c.mode == TextureMode::Patches) {
      auto b = r.bytes(texture_len(c, s.frames));
      s.patches.assign(b.begin(), b.end());
    } else {
      s.embeddings.resize(texture_len(c, s.frames));
      for (auto& v : s.embeddings) v = r.f32();
    }
    c.sequences.push_back(std::move(s));
  }
  if (r.remaining() != 0) fail(ErrorKind::Format, "trailing bytes after last sequence");
  return c;
}

void write_container(const std::string& path, const Container& data) { io::write_file(path, encode_container(data)); }

Container read_container(const std::string& path) {
  auto bytes = io::read_file(path, "dataset");
  try {
    return decode_container(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

}  // namespace hst
