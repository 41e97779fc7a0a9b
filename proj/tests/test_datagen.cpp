#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <set>

#include "hst/container.hpp"
#include "hst/datagen.hpp"
#include "hst/error.hpp"

using namespace hst;

namespace {

SynthConfig quick(std::size_t n, std::size_t frames = 48) {
  SynthConfig c;
  c.n_sequences = n;
  c.frames = frames;
  c.texture = TextureMode::Patches;
  return c;
}

double apex(const GeneratedSequence& g) { return *std::max_element(g.mouth_aperture.begin(), g.mouth_aperture.end()); }

}  // namespace

TEST(Datagen, ZeroSignalFramesEqualSubjectTemplate) {
  SynthConfig cfg = quick(1, 30);
  cfg.noise = 0.0;
  cfg.rigid = 0.0;
  cfg.blinks = false;
  auto rng = sequence_rng(3, 0);
  const auto g = generate_sequence(kNormal, 4, cfg, rng);
  const Points face = make_subject(4, cfg.seed).face;
  for (std::size_t f = 0; f < 30; ++f) {
    const Points p = g.sequence.frame_points(f);
    for (Eigen::Index i = 0; i < p.size(); ++i) ASSERT_EQ(p.data()[i], static_cast<float>(face.data()[i]));
  }
}

TEST(Datagen, SequenceDeterminism) {
  const SynthConfig cfg = quick(1, 40);
  for (int label : {kNormal, kTalking, kYawning}) {
    auto r1 = sequence_rng(9, 2), r2 = sequence_rng(9, 2);
    const auto a = generate_sequence(label, 1, cfg, r1), b = generate_sequence(label, 1, cfg, r2);
    EXPECT_EQ(a.sequence, b.sequence);
    EXPECT_EQ(a.yawns, b.yawns);
  }
}

TEST(Datagen, DatasetIsByteIdenticalAcrossRunsAndThreads) {
  SynthConfig cfg = quick(24, 24);
  cfg.texture = TextureMode::Embeddings;
  const auto a = generate_dataset(cfg, 1), b = generate_dataset(cfg, 3);
  EXPECT_EQ(encode_container(a.data), encode_container(b.data));
  cfg.seed = 43;
  EXPECT_NE(encode_container(generate_dataset(cfg, 1).data), encode_container(a.data));
}

TEST(Datagen, ClassMix) {
  const auto ds = generate_dataset(quick(400, 8), 0);
  std::array<std::size_t, 3> counts{};
  for (const auto& s : ds.data.sequences) ++counts[static_cast<std::size_t>(s.label)];
  const std::array<double, 3> mix{0.5, 0.25, 0.25};
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(counts[c] / 400.0, mix[c], 0.05);
}

TEST(Datagen, SubjectDisjointSplit) {
  const auto ds = generate_dataset(quick(120, 8), 0);
  auto subjects = [&](const std::vector<std::size_t>& idx) {
    std::set<std::uint32_t> s;
    for (auto i : idx) s.insert(ds.data.sequences[i].subject);
    return s;
  };
  const auto tr = subjects(ds.split.train), va = subjects(ds.split.val), te = subjects(ds.split.test);
  EXPECT_EQ(tr.size(), 20u);
  EXPECT_EQ(va.size(), 5u);
  EXPECT_EQ(te.size(), 5u);
  for (auto s : te) {
    EXPECT_EQ(tr.count(s), 0u);
    EXPECT_EQ(va.count(s), 0u);
  }
  for (auto s : va) EXPECT_EQ(tr.count(s), 0u);
  EXPECT_EQ(ds.split.train.size() + ds.split.val.size() + ds.split.test.size(), 120u);
}

TEST(Datagen, TooFewSubjects) {
  SynthConfig cfg = quick(10, 8);
  cfg.subjects = 4;
  EXPECT_THROW(generate_dataset(cfg), Error);
}

TEST(Datagen, YawnApertureExceedsTalking) {
  const SynthConfig cfg = quick(1, 400);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto r1 = sequence_rng(seed, 0), r2 = sequence_rng(seed, 0);
    const auto yawn = generate_sequence(kYawning, 3, cfg, r1);
    const auto talk = generate_sequence(kTalking, 3, cfg, r2);
    EXPECT_GT(apex(yawn), 3.0 * apex(talk)) << "seed " << seed;
  }
}

TEST(Datagen, ApexApertureOrdersClasses) {
  const SynthConfig cfg = quick(1, 160);
  std::array<double, 3> mean{};
  for (int label : {kNormal, kTalking, kYawning})
    for (std::size_t i = 0; i < 50; ++i) {
      auto r = sequence_rng(77, i * 3 + static_cast<std::size_t>(label));
      mean[static_cast<std::size_t>(label)] += apex(generate_sequence(label, static_cast<std::uint32_t>(i % 30), cfg, r)) / 50.0;
    }
  EXPECT_GT(mean[kYawning], mean[kTalking]);
  EXPECT_GT(mean[kTalking], mean[kNormal]);
}

TEST(Datagen, YawnIntervalsAndApertureAgree) {
  const SynthConfig cfg = quick(1, 300);
  auto rng = sequence_rng(5, 1);
  const auto g = generate_sequence(kYawning, 0, cfg, rng);
  ASSERT_GE(g.yawns.size(), 1u);
  ASSERT_LE(g.yawns.size(), 2u);
  const double neutral = lip_aperture(make_subject(0, cfg.seed).face);
  for (auto [b, e] : g.yawns) {
    EXPECT_GE(e - b, 30u);
    EXPECT_LE(e - b, 60u);
    double peak = 0.0;
    for (auto f = b; f < e; ++f) peak = std::max(peak, g.mouth_aperture[f]);
    EXPECT_GT(peak - neutral, 0.5);
  }
  // outside the events the mouth stays at rest
  for (std::size_t f = 0; f < 300; ++f) {
    bool inside = false;
    for (auto [b, e] : g.yawns) inside |= f >= b && f < e;
    if (!inside) EXPECT_NEAR(g.mouth_aperture[f], neutral, 1e-12);
  }
}

TEST(Datagen, FramesAreNeverDegenerate) {
  const auto ds = generate_dataset(quick(30, 20), 0);
  const auto tmpl = CanonicalTemplate::from_points(neutral_face());
  for (const auto& s : ds.data.sequences)
    for (std::size_t f = 0; f < s.frames; ++f) EXPECT_NO_THROW(procrustes_align(s.frame_points(f), tmpl));
}

TEST(Datagen, InvalidInputs) {
  SynthConfig cfg = quick(1, 10);
  auto rng = sequence_rng(1, 0);
  EXPECT_THROW(generate_sequence(3, 0, cfg, rng), Error);
  cfg.class_mix = {0.5, 0.5, 0.5};
  EXPECT_THROW(cfg.validate(), Error);
  cfg = quick(1, 0);
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(Container, RoundTripBothModes) {
  for (auto mode : {TextureMode::Patches, TextureMode::Embeddings}) {
    SynthConfig cfg = quick(10, 6);
    cfg.texture = mode;
    const auto ds = generate_dataset(cfg, 0);
    const std::string path = ::testing::TempDir() + "roundtrip.hstd";
    write_container(path, ds.data);
    const Container back = read_container(path);
    EXPECT_EQ(back, ds.data);
    EXPECT_EQ(encode_container(back), encode_container(ds.data));
    std::remove(path.c_str());
  }
}

TEST(Container, HeaderLayout) {
  Container c;
  c.mode = TextureMode::Embeddings;
  c.d_tex = 16;
  const auto bytes = encode_container(c);
  // "HSTD", u32 1, u8 1, u32 16, u32 0
  const std::vector<std::uint8_t> want{'H', 'S', 'T', 'D', 1, 0, 0, 0, 1, 16, 0, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(bytes, want);
  EXPECT_EQ(decode_container(bytes), c);
  Container raw;
  raw.mode = TextureMode::Patches;
  EXPECT_EQ(decode_container(encode_container(raw)), raw);
}

TEST(Container, TruncationNamesSequence) {
  const auto ds = generate_dataset(quick(6, 4), 0);
  const auto bytes = encode_container(ds.data);
  const std::size_t per_seq = (bytes.size() - 13) / 6;
  const std::size_t cut = 13 + 3 * per_seq + per_seq / 2;  // inside the fourth sequence
  try {
    decode_container(std::span(bytes).first(cut));
    FAIL() << "expected truncation error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Format);
    EXPECT_NE(std::string(e.what()).find("sequence 3"), std::string::npos) << e.what();
  }
}

TEST(Container, StructuredErrors) {
  const auto ds = generate_dataset(quick(5, 3), 0);
  auto bytes = encode_container(ds.data);
  auto bad = bytes;
  bad[1] = 'X';
  EXPECT_THROW(decode_container(bad), Error);
  bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(decode_container(bad), Error);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(decode_container(bad), Error);
  try {
    read_container("/nonexistent/data.hstd");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Io);
  }
  Container c = ds.data;
  c.sequences[0].landmarks.pop_back();
  EXPECT_THROW(encode_container(c), Error);
  c = ds.data;
  c.sequences[0].label = 5;
  EXPECT_THROW(validate_container(c), Error);
}
