#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <Eigen/LU>
#include <cstdio>
#include <random>

#include "hst/alignment.hpp"
#include "hst/datagen.hpp"
#include "hst/error.hpp"
#include "oracles.hpp"

using namespace hst;
using hst::testing::random_rotation;

namespace {

Points random_points(int rows, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Points p(rows, 3);
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < 3; ++c) p(i, c) = u(rng);
  return p;
}

double frob(const Points& a, const Points& b) { return (a - b).norm(); }

}  // namespace

TEST(Alignment, RoundTripRandomSimilarities) {
  const auto tmpl = CanonicalTemplate::from_points(neutral_face());
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> scale(0.2, 5.0), shift(-50.0, 50.0);
  for (int trial = 0; trial < 1000; ++trial) {
    SimilarityTransform t;
    t.scale = scale(rng);
    t.rotation = random_rotation(rng);
    t.translation = Eigen::RowVector3d(shift(rng), shift(rng), shift(rng));
    const auto r = procrustes_align(t.apply(tmpl.points()), tmpl);
    ASSERT_LT(r.residual, 1e-9) << "trial " << trial;
    EXPECT_LT(frob(r.aligned, tmpl.points()), 1e-9);
    const Eigen::Matrix3d& R = r.transform.rotation;
    EXPECT_LT((R.transpose() * R - Eigen::Matrix3d::Identity()).norm(), 1e-9);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-9);
    EXPECT_LT(frob(r.transform.apply(t.apply(tmpl.points())), r.aligned), 1e-12);
  }
}

TEST(Alignment, MirroredInputStillProperRotation) {
  std::mt19937_64 rng(8);
  const Points ref = random_points(68, rng);
  Points mirrored = ref;
  mirrored.col(0) *= -1.0;
  const auto r = procrustes_align(mirrored, ref);
  EXPECT_NEAR(r.transform.rotation.determinant(), 1.0, 1e-9);
  EXPECT_GT(r.residual, 1e-3);  // a reflection cannot be undone by a rotation
}

TEST(Alignment, NoCandidateBeatsClosedForm) {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> noise(0.0, 0.05), small(0.0, 0.02);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int rep = 0; rep < 5; ++rep) {
    const Points ref = random_points(5, rng);
    Points frame = ref * random_rotation(rng) * 1.7;
    for (int i = 0; i < frame.size(); ++i) frame.data()[i] += noise(rng);
    const auto best = procrustes_align(frame, ref);
    // random candidates, plus local perturbations of the optimum
    for (int k = 0; k < 1000; ++k) {
      SimilarityTransform c;
      if (k % 2 == 0) {
        c.scale = 0.1 + std::abs(u(rng)) * 2.0;
        c.rotation = random_rotation(rng);
        c.translation = Eigen::RowVector3d(u(rng), u(rng), u(rng));
      } else {
        c = best.transform;
        c.scale *= 1.0 + small(rng);
        c.rotation = c.rotation * Eigen::AngleAxisd(small(rng), Eigen::Vector3d(u(rng), u(rng), u(rng)).normalized());
        c.translation += Eigen::RowVector3d(small(rng), small(rng), small(rng));
      }
      EXPECT_GE(frob(c.apply(frame), ref), best.residual - 1e-12);
    }
  }
}

TEST(Alignment, SequencePoseInvariance) {
  const auto tmpl = CanonicalTemplate::from_points(neutral_face());
  SynthConfig cfg;
  cfg.rigid = 3.0;
  std::mt19937_64 rng(21), motion_rng(22);
  std::normal_distribution<double> n(0.0, 0.01);
  const std::size_t F = 40;
  const auto poses = head_motion(F, cfg, motion_rng);
  std::vector<Points> still, moving;
  for (std::size_t f = 0; f < F; ++f) {
    Points p = neutral_face();
    for (int i = 0; i < p.size(); ++i) p.data()[i] += n(rng);  // non-rigid deformation
    still.push_back(p);
    moving.push_back(poses[f].apply(p));
  }
  const auto a = align_sequence(still, tmpl);
  const auto b = align_sequence(moving, tmpl);
  for (std::size_t f = 0; f < F; ++f) EXPECT_LT(frob(a[f], b[f]), 1e-6) << "frame " << f;
}

TEST(Alignment, HeadMotionRigidZeroIsIdentity) {
  SynthConfig cfg;
  cfg.rigid = 0.0;
  std::mt19937_64 rng(1);
  for (const auto& t : head_motion(10, cfg, rng)) {
    EXPECT_EQ(t.scale, 1.0);
    EXPECT_LT((t.rotation - Eigen::Matrix3d::Identity()).norm(), 1e-15);
    EXPECT_LT(t.translation.norm(), 1e-15);
  }
}

TEST(Alignment, TemplateIsCenteredUnitNorm) {
  const auto tmpl = CanonicalTemplate::from_points(neutral_face());
  EXPECT_LT(tmpl.points().colwise().mean().norm(), 1e-15);
  EXPECT_NEAR(tmpl.points().norm(), 1.0, 1e-15);
}

TEST(Alignment, ShippedTemplateMatchesNeutralFace) {
  const auto shipped = CanonicalTemplate::load_default();
  const auto built = CanonicalTemplate::from_points(neutral_face());
  ASSERT_EQ(shipped.points().rows(), 68);
  EXPECT_LT(frob(shipped.points(), built.points()), 1e-15);
}

TEST(Alignment, TemplateSaveLoadRoundTrip) {
  std::mt19937_64 rng(3);
  const auto t = CanonicalTemplate::from_points(random_points(68, rng));
  const std::string path = ::testing::TempDir() + "tmpl_roundtrip.txt";
  t.save(path);
  const auto back = CanonicalTemplate::load(path);
  EXPECT_LT(frob(back.points(), t.points()), 1e-15);
  std::remove(path.c_str());
}

TEST(Alignment, Errors) {
  Points same = Points::Ones(68, 3);
  EXPECT_THROW(CanonicalTemplate::from_points(same), Error);
  std::mt19937_64 rng(4);
  EXPECT_THROW(procrustes_align(random_points(10, rng), random_points(11, rng)), Error);
  EXPECT_THROW(CanonicalTemplate::load("/nonexistent/template.txt"), Error);
  const auto tmpl = CanonicalTemplate::from_points(neutral_face());
  std::vector<Points> frames{neutral_face(), Points::Zero(68, 3)};
  try {
    align_sequence(frames, tmpl);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("frame 1"), std::string::npos) << e.what();
  }
}
