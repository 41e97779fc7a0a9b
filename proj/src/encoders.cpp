#include "hst/encoders.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "hst/init.hpp"
#include "hst/ops.hpp"

namespace hst {

using namespace ad;

Tensor patches_to_tensor(const std::vector<TexturePatch>& patches) {
  require(!patches.empty(), "patches_to_tensor: no patches");
  constexpr std::size_t S = kPatchSize;
  Tensor t({patches.size(), kPatchChannels, S, S});
  for (std::size_t n = 0; n < patches.size(); ++n)
    for (std::size_t c = 0; c < kPatchChannels; ++c)
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x)
          t[((n * kPatchChannels + c) * S + y) * S + x] = patches[n].at(y, x, c) / 255.0;
  return t;
}

Var project_geo(Var aligned, const GeoProjection& proj) {
  if (aligned.value().cols() != 3) fail(ErrorKind::Shape, "project_geo: expected (n,3) coordinates");
  return add_row(matmul(aligned, proj.weight), proj.bias);
}

Var project_geo(Graph& g, const Points& aligned, const GeoProjection& proj) {
  Tensor t({static_cast<std::size_t>(aligned.rows()), 3}, std::span<const double>(aligned.data(), aligned.size()));
  return project_geo(g.constant(std::move(t)), proj);
}

Var cnn_trunk(Var images, const MicroCnn& cnn) {
  const auto& s = images.value().shape();
  if (s.size() != 4 || s[1] != kPatchChannels || s[2] != kPatchSize || s[3] != kPatchSize)
    fail(ErrorKind::Shape, "micro-cnn: expected (N,3,32,32) patches, got " + shape_str(s));
  Var h = max_pool2x2(leaky_relu(conv3x3(images, cnn.conv1_w, cnn.conv1_b)));
  h = leaky_relu(conv3x3(h, cnn.conv2_w, cnn.conv2_b));
  return global_avg_pool(h);
}

Var encode_patches(Var images, const MicroCnn& cnn) {
  return add_row(matmul(cnn_trunk(images, cnn), cnn.fc_w), cnn.fc_b);
}

Var encode_patch(Graph& g, const TexturePatch& patch, const MicroCnn& cnn) {
  return reshape(encode_patches(g.constant(patches_to_tensor({patch})), cnn), {cnn.fc_b.value().size()});
}

NodeFeatures build_node_features(Graph& g, const Points& aligned, const std::vector<TexturePatch>& patches,
                                 const GeoProjection& proj, const MicroCnn& cnn) {
  if (patches.size() != kNumRegions)
    fail(ErrorKind::InvalidArgument, "build_node_features: expected 3 patches (left eye, right eye, mouth), got " +
                                         std::to_string(patches.size()));
  if (aligned.rows() != kNumLandmarks) fail(ErrorKind::Shape, "build_node_features: expected 68 landmarks");
  return {project_geo(g, aligned, proj), encode_patches(g.constant(patches_to_tensor(patches)), cnn)};
}

const FrozenTrunk& FrozenTrunk::instance() {
  static const FrozenTrunk trunk = [] {
    std::mt19937_64 rng(0x7e47u);
    FrozenTrunk t;
    t.conv1_w = uniform_fan_in({kCnnConv1, kPatchChannels, 3, 3}, kPatchChannels * 9, rng);
    t.conv1_b = Tensor({kCnnConv1});
    t.conv2_w = uniform_fan_in({kCnnConv2, kCnnConv1, 3, 3}, kCnnConv1 * 9, rng);
    t.conv2_b = Tensor({kCnnConv2});
    return t;
  }();
  return trunk;
}

namespace {

// Inference-only trunk for one patch; matches cnn_trunk on the frozen weights.
struct TrunkWorkspace {
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Mat img{kPatchChannels, kPatchSize * kPatchSize};
  Mat cols1{kPatchChannels * 9, kPatchSize * kPatchSize};
  Mat h1{kCnnConv1, kPatchSize * kPatchSize};
  Mat p1{kCnnConv1, kPatchSize * kPatchSize / 4};
  Mat cols2{kCnnConv1 * 9, kPatchSize * kPatchSize / 4};
  Mat h2{kCnnConv2, kPatchSize * kPatchSize / 4};
};

void im2col(const double* img, std::size_t C, std::size_t S, double* cols) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((c * 3 + ky) * 3 + kx) * S * S;
        for (std::size_t y = 0; y < S; ++y) {
          const long sy = static_cast<long>(y + ky) - 1;
          for (std::size_t x = 0; x < S; ++x) {
            const long sx = static_cast<long>(x + kx) - 1;
            const bool out = sy < 0 || sx < 0 || sy >= static_cast<long>(S) || sx >= static_cast<long>(S);
            row[y * S + x] = out ? 0.0 : img[(c * S + static_cast<std::size_t>(sy)) * S + static_cast<std::size_t>(sx)];
          }
        }
      }
}

void leaky(TrunkWorkspace::Mat& m) { m = m.cwiseMax(m * kLeakySlope); }

}  // namespace

Tensor frozen_trunk_embeddings(const std::vector<TexturePatch>& patches) {
  require(!patches.empty(), "frozen_trunk_embeddings: no patches");
  const FrozenTrunk& ft = FrozenTrunk::instance();
  constexpr std::size_t S = kPatchSize, H = S / 2;
  using RMat = Eigen::Map<const TrunkWorkspace::Mat>;
  const RMat w1(ft.conv1_w.data(), kCnnConv1, kPatchChannels * 9);
  const RMat w2(ft.conv2_w.data(), kCnnConv2, kCnnConv1 * 9);
  const Eigen::Map<const Eigen::VectorXd> b1(ft.conv1_b.data(), kCnnConv1), b2(ft.conv2_b.data(), kCnnConv2);
  TrunkWorkspace ws;
  Tensor out({patches.size(), kTrunkWidth});
  for (std::size_t n = 0; n < patches.size(); ++n) {
    for (std::size_t c = 0; c < kPatchChannels; ++c)
      for (std::size_t i = 0; i < S * S; ++i) ws.img(c, i) = patches[n].pixels[i * 3 + c] / 255.0;
    im2col(ws.img.data(), kPatchChannels, S, ws.cols1.data());
    ws.h1.noalias() = w1 * ws.cols1;
    ws.h1.colwise() += b1;
    leaky(ws.h1);
    for (std::size_t c = 0; c < kCnnConv1; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < H; ++x) {
          const double* r = ws.h1.data() + c * S * S + 2 * y * S + 2 * x;
          ws.p1(c, y * H + x) = std::max(std::max(r[0], r[1]), std::max(r[S], r[S + 1]));
        }
    im2col(ws.p1.data(), kCnnConv1, H, ws.cols2.data());
    ws.h2.noalias() = w2 * ws.cols2;
    ws.h2.colwise() += b2;
    leaky(ws.h2);
    const Eigen::VectorXd gap = ws.h2.rowwise().mean();
    for (std::size_t k = 0; k < kTrunkWidth; ++k) out[n * kTrunkWidth + k] = gap[k];
  }
  return out;
}

}  // namespace hst
