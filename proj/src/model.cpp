#include "hst/model.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "hst/encoders.hpp"
#include "hst/init.hpp"
#include "hst/ops.hpp"
#include "hst/parallel.hpp"
#include "hst/sampling.hpp"
#include "hst/ssm.hpp"

namespace hst {

using namespace ad;

void ModelConfig::validate() const {
  require(T >= 1 && d >= 1 && d_out >= 1 && d_a >= 1 && n >= 1 && depth >= 1, "model config: sizes must be positive");
  require(K >= 1 && K <= kNumLandmarks - 1, "model config: K must be in [1, 67]");
  require(num_classes >= 2, "model config: need at least two classes");
  require(temporal == TemporalMode::BiMamba || temporal == TemporalMode::MaxPool, "model config: unknown temporal mode");
  require(texture == TextureMode::Patches || texture == TextureMode::Embeddings, "model config: unknown texture mode");
  if (texture == TextureMode::Patches) require(d_tex == kTrunkWidth, "model config: raw patches imply d_tex = 16");
  require(d_tex >= 1, "model config: d_tex must be positive");
}

namespace {

std::string layer_prefix(std::size_t l) { return "temporal." + std::to_string(l) + "."; }

Tensor ladder(std::size_t rows, std::size_t n) {
  Tensor t({rows, n});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t s = 0; s < n; ++s) t.at(r, s) = std::log(static_cast<double>(s + 1));
  return t;
}

}  // namespace

ParamSet init_params(const ModelConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamSet p;
  // Creation order fixes the RNG stream; keep it stable.
  p["geo.weight"] = uniform_fan_in({3, cfg.d}, 3, rng);
  p["geo.bias"] = Tensor({cfg.d});
  if (cfg.texture == TextureMode::Patches) {
    p["tex.conv1.weight"] = uniform_fan_in({kCnnConv1, kPatchChannels, 3, 3}, kPatchChannels * 9, rng);
    p["tex.conv1.bias"] = Tensor({kCnnConv1});
    p["tex.conv2.weight"] = uniform_fan_in({kCnnConv2, kCnnConv1, 3, 3}, kCnnConv1 * 9, rng);
    p["tex.conv2.bias"] = Tensor({kCnnConv2});
  }
  p["tex.fc.weight"] = uniform_fan_in({cfg.d_tex, cfg.d}, cfg.d_tex, rng);
  p["tex.fc.bias"] = Tensor({cfg.d});
  p["hyper.theta"] = uniform_fan_in({cfg.d, cfg.d_out}, cfg.d, rng);
  p["hyper.edge_weight"] = Tensor({kNumHyperedges}, 1.0);
  p["attn.W"] = uniform_fan_in({cfg.d_out, cfg.d_a}, cfg.d_out, rng);
  p["attn.b"] = Tensor({cfg.d_a});
  p["attn.w"] = uniform_fan_in({cfg.d_a, 1}, cfg.d_a, rng);
  if (cfg.temporal == TemporalMode::BiMamba) {
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      const std::string pre = layer_prefix(l);
      p[pre + "norm.gamma"] = Tensor({cfg.d_out}, 1.0);
      p[pre + "norm.beta"] = Tensor({cfg.d_out});
      for (const char* dir : {"fwd.", "bwd."}) {
        p[pre + dir + "A_log"] = ladder(cfg.d_out, cfg.n);
        p[pre + dir + "B_proj"] = uniform_fan_in({cfg.d_out, cfg.n}, cfg.d_out, rng);
        p[pre + dir + "C_proj"] = uniform_fan_in({cfg.d_out, cfg.n}, cfg.d_out, rng);
        p[pre + dir + "dt.weight"] = uniform_fan_in({cfg.d_out, cfg.d_out}, cfg.d_out, rng);
        p[pre + dir + "dt.bias"] = Tensor({cfg.d_out});
      }
    }
  }
  p["head.weight"] = uniform_fan_in({cfg.d_out, cfg.num_classes}, cfg.d_out, rng);
  p["head.bias"] = Tensor({cfg.num_classes});
  return p;
}

std::vector<ParamGroup> param_groups(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d, o = cfg.d_out, n = cfg.n;
  std::vector<ParamGroup> g;
  g.push_back({"geo_projection", 3 * d + d});
  std::size_t tex = cfg.d_tex * d + d;
  if (cfg.texture == TextureMode::Patches)
    tex += kCnnConv1 * (kPatchChannels * 9 + 1) + kCnnConv2 * (kCnnConv1 * 9 + 1);
  g.push_back({"micro_cnn", tex});
  g.push_back({"hyperconv", d * o + kNumHyperedges});
  g.push_back({"attention_pool", o * cfg.d_a + cfg.d_a + cfg.d_a});
  const std::size_t per_dir = 3 * o * n + o * o + o;
  g.push_back({"bimamba", cfg.temporal == TemporalMode::BiMamba ? cfg.depth * (2 * o + 2 * per_dir) : 0});
  g.push_back({"head", o * cfg.num_classes + cfg.num_classes});
  return g;
}

std::size_t expected_param_count(const ModelConfig& cfg) {
  std::size_t total = 0;
  for (const auto& g : param_groups(cfg)) total += g.count;
  return total;
}

std::size_t count_params(const ParamSet& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.size();
  return total;
}

ClipInput prepare_clip(const Sequence& seq, TextureMode mode, std::size_t d_tex, const ModelConfig& cfg,
                       const CanonicalTemplate& tmpl) {
  require(mode == cfg.texture, "prepare_clip: container texture mode does not match the model");
  if (mode == TextureMode::Embeddings) require(d_tex == cfg.d_tex, "prepare_clip: embedding width does not match the model");
  const auto idx = sample_indices(seq.frames, static_cast<long long>(cfg.T)).indices;
  const std::size_t T = cfg.T;
  ClipInput clip;
  clip.label = seq.label;
  clip.geo = Tensor({T * kNumLandmarks, 3});
  clip.topology.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t f = idx[t] - 1;  // 1-based sample index to 0-based frame
    AlignmentResult a;
    try {
      a = procrustes_align(seq.frame_points(f), tmpl);
    } catch (const Error& e) {
      throw Error(e.kind(), "alignment: frame " + std::to_string(f) + ": " + e.what());
    }
    std::copy(a.aligned.data(), a.aligned.data() + kNumLandmarks * 3, clip.geo.data() + t * kNumLandmarks * 3);
    clip.topology.push_back(build_topology(a.aligned, static_cast<int>(cfg.K)));
  }
  if (mode == TextureMode::Embeddings) {
    clip.texture = Tensor({T * kNumRegions, d_tex});
    for (std::size_t t = 0; t < T; ++t) {
      const float* src = seq.embeddings.data() + (idx[t] - 1) * kNumRegions * d_tex;
      for (std::size_t i = 0; i < kNumRegions * d_tex; ++i) clip.texture[t * kNumRegions * d_tex + i] = src[i];
    }
  } else {
    std::vector<TexturePatch> patches;
    patches.reserve(T * kNumRegions);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t r = 0; r < kNumRegions; ++r) patches.push_back(seq.patch(idx[t] - 1, r));
    clip.texture = patches_to_tensor(patches);
  }
  return clip;
}

std::vector<ClipInput> prepare_clips(const Container& data, const std::vector<std::size_t>& indices,
                                     const ModelConfig& cfg, const CanonicalTemplate& tmpl, std::size_t threads) {
  std::vector<ClipInput> clips(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    const std::size_t k = indices[i];
    require(k < data.sequences.size(), "prepare_clips: sequence index out of range");
    try {
      clips[i] = prepare_clip(data.sequences[k], data.mode, data.d_tex, cfg, tmpl);
    } catch (const Error& e) {
      throw Error(e.kind(), "sequence " + std::to_string(k) + ": " + e.what());
    }
  });
  return clips;
}

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.kind(), std::string(name) + ": " + e.what());
  }
}

}  // namespace

ClipOutput forward_clip(Graph& g, const ClipInput& clip, const ParamSet& params, const ModelConfig& cfg) {
  std::map<std::string, Var> bound;
  for (const auto& [name, t] : params) bound.emplace(name, g.parameter(name, t));
  auto P = [&](const std::string& name) {
    auto it = bound.find(name);
    if (it == bound.end()) fail(ErrorKind::InvalidArgument, "forward_clip: missing parameter " + name);
    return it->second;
  };
  const std::size_t T = clip.topology.size();
  if (T == 0 || clip.geo.shape() != Shape{T * kNumLandmarks, 3} || clip.texture.ndim() < 2 ||
      clip.texture.dim(0) != T * kNumRegions)
    fail(ErrorKind::Shape, "forward_clip: clip tensors disagree with its frame count");

  Var tex = stage("texture encoder", [&] {
    Var x = g.constant(clip.texture);
    if (cfg.texture == TextureMode::Patches) {
      MicroCnn cnn{P("tex.conv1.weight"), P("tex.conv1.bias"), P("tex.conv2.weight"),
                   P("tex.conv2.bias"),   P("tex.fc.weight"),   P("tex.fc.bias")};
      return encode_patches(x, cnn);
    }
    return add_row(matmul(x, P("tex.fc.weight")), P("tex.fc.bias"));
  });

  Var x_geo = stage("hyperconv", [&] {
    // (X Wp + bp) Theta computed as X (Wp Theta) + bp Theta.
    Var theta = P("hyper.theta");
    const std::size_t d = theta.value().dim(0), d_out = theta.value().dim(1);
    Var wg = matmul(P("geo.weight"), theta);
    Var bg = reshape(matmul(reshape(P("geo.bias"), {1, d}), theta), {d_out});
    Var u_geo = add_row(matmul(g.constant(clip.geo), wg), bg);
    Var u = concat_rows({u_geo, matmul(tex, theta)});
    std::vector<const Incidence*> frames;
    std::vector<std::size_t> rows(T * kNumNodes);
    for (std::size_t t = 0; t < T; ++t) {
      frames.push_back(&clip.topology[t]);
      for (std::size_t v = 0; v < kNumNodes; ++v)
        rows[t * kNumNodes + v] =
            v < kNumLandmarks ? t * kNumLandmarks + v : T * kNumLandmarks + t * kNumRegions + (v - kNumLandmarks);
    }
    Var h = leaky_relu(hypergraph_propagate(u, P("hyper.edge_weight"), frames, rows));
    // Geometry rows come first in this layout; super-nodes are dropped here.
    std::vector<std::size_t> keep(T * kNumLandmarks);
    std::iota(keep.begin(), keep.end(), 0);
    return gather_rows(h, std::move(keep));
  });

  AttentionPooled pooled = stage("attention pool", [&] {
    return attention_pool_frames(x_geo, T, {P("attn.W"), P("attn.b"), P("attn.w")});
  });

  Var y = stage("temporal engine", [&] {
    Var z = pooled.z;
    if (cfg.temporal == TemporalMode::MaxPool) return z;
    for (std::size_t l = 0; l < cfg.depth; ++l) {
      const std::string pre = layer_prefix(l);
      auto dir = [&](const char* tag) {
        const std::string q = pre + tag;
        return SsmParams{P(q + "A_log"), P(q + "B_proj"), P(q + "C_proj"), P(q + "dt.weight"), P(q + "dt.bias")};
      };
      z = bimamba_forward(z, BiMambaParams{P(pre + "norm.gamma"), P(pre + "norm.beta"), dir("fwd."), dir("bwd."), true});
    }
    return z;
  });

  TemporalPooled tp = temporal_max_pool(y);
  Var logits = stage("head", [&] {
    Var w = P("head.weight");
    const std::size_t d_out = w.value().dim(0), C = w.value().dim(1);
    return reshape(add_row(matmul(reshape(tp.v, {1, d_out}), w), P("head.bias")), {C});
  });
  return {logits, tp.v, pooled.alphas.value(), tp.saliency};
}

}  // namespace hst
