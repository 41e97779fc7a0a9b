#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace hst {

inline constexpr int kNumLandmarks = 68;

// Point sets are rows; transforms multiply on the right (p' = c * p * R + t).
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

// Centered, unit-Frobenius-norm reference shape.
class CanonicalTemplate {
 public:
  // Centers and normalizes `points`; throws on a degenerate set.
  static CanonicalTemplate from_points(const Points& points);
  // 68 lines of three whitespace-separated decimals.
  static CanonicalTemplate load(const std::string& path);
  // Built-in template path (HST_TEMPLATE env var overrides the compiled default).
  static CanonicalTemplate load_default();

  void save(const std::string& path) const;
  const Points& points() const noexcept { return points_; }

 private:
  explicit CanonicalTemplate(Points p) : points_(std::move(p)) {}
  Points points_;
};

struct SimilarityTransform {
  double scale = 1.0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::RowVector3d translation = Eigen::RowVector3d::Zero();

  Points apply(const Points& p) const;
};

struct AlignmentResult {
  SimilarityTransform transform;
  Points aligned;
  double residual = 0.0;  // ||aligned - reference||_F
};

// Closed-form similarity Procrustes onto `reference` (same row count as `frame`).
// Rotation is proper (det = +1); reflections are never returned.
AlignmentResult procrustes_align(const Points& frame, const Points& reference);
AlignmentResult procrustes_align(const Points& frame, const CanonicalTemplate& tmpl);

// Independent per-frame alignment; errors carry the frame index.
std::vector<Points> align_sequence(const std::vector<Points>& frames, const CanonicalTemplate& tmpl);

}  // namespace hst
