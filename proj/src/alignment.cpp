#include "hst/alignment.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hst/error.hpp"

namespace hst {

namespace {

constexpr double kDegenerateNorm = 1e-12;

void check_points(const Points& p, const char* what) {
  if (!p.allFinite()) fail(ErrorKind::Numeric, std::string(what) + ": non-finite landmark");
}

}  // namespace

CanonicalTemplate CanonicalTemplate::from_points(const Points& points) {
  check_points(points, "template");
  Points c = points.rowwise() - points.colwise().mean();
  const double norm = c.norm();
  if (norm <= kDegenerateNorm) fail(ErrorKind::Numeric, "template: rank-deficient point set");
  return CanonicalTemplate(c / norm);
}

CanonicalTemplate CanonicalTemplate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "template not found: " + path);
  Points p(kNumLandmarks, 3);
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (row >= kNumLandmarks) fail(ErrorKind::Format, "template: more than 68 rows in " + path);
    std::istringstream ls(line);
    for (int c = 0; c < 3; ++c)
      if (!(ls >> p(row, c))) fail(ErrorKind::Format, "template: bad value on row " + std::to_string(row + 1));
    ++row;
  }
  if (row != kNumLandmarks) fail(ErrorKind::Format, "template: expected 68 rows, found " + std::to_string(row));
  return from_points(p);
}

CanonicalTemplate CanonicalTemplate::load_default() {
  if (const char* env = std::getenv("HST_TEMPLATE"); env != nullptr && *env != '\0') return load(env);
  return load(HST_DEFAULT_TEMPLATE);
}

void CanonicalTemplate::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write template: " + path);
  out << std::setprecision(17);
  for (Eigen::Index r = 0; r < points_.rows(); ++r)
    out << points_(r, 0) << ' ' << points_(r, 1) << ' ' << points_(r, 2) << '\n';
}

Points SimilarityTransform::apply(const Points& p) const {
  Points out = scale * (p * rotation);
  out.rowwise() += translation;
  return out;
}

AlignmentResult procrustes_align(const Points& frame, const Points& reference) {
  if (frame.rows() != reference.rows() || frame.rows() < 1)
    fail(ErrorKind::Shape, "procrustes_align: point counts differ");
  check_points(frame, "procrustes_align");
  const Eigen::RowVector3d mu_p = frame.colwise().mean();
  const Eigen::RowVector3d mu_q = reference.colwise().mean();
  const Points p0 = frame.rowwise() - mu_p;
  const Points q0 = reference.rowwise() - mu_q;
  const double pp = p0.squaredNorm();
  if (std::sqrt(pp) <= kDegenerateNorm) fail(ErrorKind::Numeric, "rank-deficient frame");

  // maximize tr(R^T P0^T Q0) over proper rotations
  const Eigen::Matrix3d cross = p0.transpose() * q0;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Matrix3d& U = svd.matrixU();
  const Eigen::Matrix3d& V = svd.matrixV();
  Eigen::Vector3d d(1.0, 1.0, (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0);

  AlignmentResult r;
  r.transform.rotation = U * d.asDiagonal() * V.transpose();
  r.transform.scale = svd.singularValues().dot(d) / pp;
  r.transform.translation = mu_q - r.transform.scale * (mu_p * r.transform.rotation);
  r.aligned = r.transform.apply(frame);
  r.residual = (r.aligned - reference).norm();
  return r;
}

AlignmentResult procrustes_align(const Points& frame, const CanonicalTemplate& tmpl) {
  if (frame.rows() != kNumLandmarks)
    fail(ErrorKind::Shape, "procrustes_align: expected 68 landmarks, got " + std::to_string(frame.rows()));
  return procrustes_align(frame, tmpl.points());
}

std::vector<Points> align_sequence(const std::vector<Points>& frames, const CanonicalTemplate& tmpl) {
  require(!frames.empty(), "align_sequence: empty frame list");
  std::vector<Points> out;
  out.reserve(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    try {
      out.push_back(procrustes_align(frames[i], tmpl).aligned);
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace hst
