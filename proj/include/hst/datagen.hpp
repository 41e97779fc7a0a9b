#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/container.hpp"

namespace hst {

enum ClassLabel : int { kNormal = 0, kTalking = 1, kYawning = 2 };

struct SynthConfig {
  std::size_t n_sequences = 600;
  std::size_t frames = 640;   // raw clip length N
  double fps = 20.0;
  std::array<double, 3> class_mix{0.5, 0.25, 0.25};  // normal, talking, yawning
  std::size_t subjects = 30;
  // Per-frame observation noise in face-scale units: landmark jitter and the
  // matching jitter of the rendered texture apertures.
  double noise = 0.04;
  double rigid = 1.0;  // scales head rotation/translation/scale variation
  bool blinks = true;
  TextureMode texture = TextureMode::Embeddings;
  std::uint64_t seed = 42;

  void validate() const;
};

// Neutral Dlib-68 layout in face-scale units (outer eye-corner distance = 1).
Points neutral_face();
inline constexpr double kFaceScale = 1.0;

struct SubjectProfile {
  Points face;                      // neutral face with identity offsets
  std::array<double, 3> skin{};     // RGB base tone
};
SubjectProfile make_subject(std::uint32_t subject_id, std::uint64_t seed);

struct GeneratedSequence {
  Sequence sequence;
  // Raw-frame [begin, end) ranges of yawn events.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> yawns;
  std::vector<double> mouth_aperture;  // clean per-frame signal, face-scale units
  std::vector<double> eye_openness;    // clean per-frame signal in [0, 1]
};

// Per-frame head pose: slow drift plus jitter, all scaled by cfg.rigid
// (rigid = 0 gives identity transforms).
std::vector<SimilarityTransform> head_motion(std::size_t frames, const SynthConfig& cfg, std::mt19937_64& rng);

// Deterministic in (label, subject, cfg, rng state). Raw patches are always
// rendered; embeddings replace them when cfg.texture says so.
GeneratedSequence generate_sequence(int label, std::uint32_t subject, const SynthConfig& cfg, std::mt19937_64& rng);

// Stream for sequence `index` of a dataset generated with `seed`.
std::mt19937_64 sequence_rng(std::uint64_t seed, std::size_t index);

struct Split {
  std::vector<std::size_t> train, val, test;  // sequence indices
};

// 70/15/15 partition of the unique subject ids (at least one subject in each
// of val and test), then every clip follows its subject.
Split split_by_subject(const Container& data, std::uint64_t seed = 0);

struct GeneratedDataset {
  Container data;
  Split split;
  std::vector<GeneratedSequence> meta;  // sequences left empty; signals and yawn intervals only
};

GeneratedDataset generate_dataset(const SynthConfig& cfg, std::size_t threads = 0);

// Vertical inner-lip distance (landmarks 62 and 66).
double lip_aperture(const Points& p);

}  // namespace hst
