#include "hst/gradcheck.hpp"

#include <random>

#include "hst/datagen.hpp"
#include "hst/encoders.hpp"
#include "hst/hypergraph.hpp"
#include "hst/init.hpp"
#include "hst/losses.hpp"
#include "hst/ops.hpp"
#include "hst/pooling.hpp"
#include "hst/ssm.hpp"
#include "hst/train.hpp"

namespace hst {

using namespace ad;

namespace {

Tensor rnd(const Shape& s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(s);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// sum(out * fixed random weights): every output element gets its own cotangent.
Var probe(Var out) {
  std::mt19937_64 rng(0x9e0be);
  return sum_all(mul(out, out.graph->constant(rnd(out.shape(), rng, 0.5, 1.5))));
}

using Unary = Var (*)(Var);

}  // namespace

ModelConfig toy_model_config() {
  ModelConfig c;
  c.T = 4;
  c.d = 4;
  c.d_out = 8;
  c.d_a = 4;
  c.n = 4;
  c.texture = TextureMode::Patches;
  c.d_tex = kTrunkWidth;
  return c;
}

ClipInput toy_clip(const ModelConfig& cfg, std::uint64_t seed) {
  SynthConfig sc;
  sc.frames = 4 * cfg.T;
  sc.texture = TextureMode::Patches;
  sc.seed = seed;
  auto rng = sequence_rng(seed, 0);
  GeneratedSequence g = generate_sequence(kYawning, 0, sc, rng);
  const CanonicalTemplate tmpl = CanonicalTemplate::from_points(neutral_face());
  return prepare_clip(g.sequence, TextureMode::Patches, kTrunkWidth, cfg, tmpl);
}

std::vector<GradCase> gradcheck_cases(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCase> cases;
  auto P = [](Graph& g, const ParamSet& p, const char* n) { return g.parameter(n, p.at(n)); };

  cases.push_back({"matmul", [P](Graph& g, const ParamSet& p) { return probe(matmul(P(g, p, "a"), P(g, p, "b"))); },
                   {{"a", rnd({3, 4}, rng)}, {"b", rnd({4, 2}, rng)}}});
  cases.push_back({"add_sub_mul", [P](Graph& g, const ParamSet& p) {
                     Var a = P(g, p, "a"), b = P(g, p, "b");
                     return probe(mul(add(a, b), sub(a, b)));
                   },
                   {{"a", rnd({2, 3}, rng)}, {"b", rnd({2, 3}, rng)}}});
  cases.push_back({"add_row_affine", [P](Graph& g, const ParamSet& p) {
                     return probe(affine(add_row(P(g, p, "a"), P(g, p, "bias")), -1.7, 0.3));
                   },
                   {{"a", rnd({3, 4}, rng)}, {"bias", rnd({4}, rng)}}});
  cases.push_back({"pow_scalar", [P](Graph& g, const ParamSet& p) { return probe(pow_scalar(P(g, p, "a"), 2.5)); },
                   {{"a", rnd({2, 3}, rng, 0.2, 1.5)}}});
  cases.push_back({"log", [P](Graph& g, const ParamSet& p) { return probe(log(P(g, p, "a"))); },
                   {{"a", rnd({2, 3}, rng, 0.2, 2.0)}}});
  const std::pair<const char*, Unary> unary[] = {
      {"exp", [](Var v) { return exp(v); }},           {"tanh", [](Var v) { return tanh(v); }},
      {"sigmoid", [](Var v) { return sigmoid(v); }},   {"silu", [](Var v) { return silu(v); }},
      {"softplus", [](Var v) { return softplus(v); }}, {"leaky_relu", [](Var v) { return leaky_relu(v); }},
      {"softmax_rows", [](Var v) { return softmax_rows(v); }},
      {"log_softmax_rows", [](Var v) { return log_softmax_rows(v); }},
      {"max_over_rows", [](Var v) { return max_over_rows(v); }},
      {"mean_over_rows", [](Var v) { return mean_over_rows(v); }},
      {"sum_all", [](Var v) { return sum_all(v); }},   {"mean_all", [](Var v) { return mean_all(v); }},
      {"reshape", [](Var v) { return reshape(v, {4, 3}); }},
      {"gather_rows", [](Var v) { return gather_rows(v, {2, 0, 2, 3}); }},
      {"scatter_rows", [](Var v) { return scatter_rows(v, {5, 1, 0, 3}, 6); }},
      {"concat_rows", [](Var v) { return concat_rows({v, tanh(v)}); }},
      {"gather_elements", [](Var v) { return gather_elements(v, {0, 5, 7, 11, 5}); }},
  };
  for (const auto& [name, f] : unary)
    cases.push_back({name, [f](Graph& g, const ParamSet& p) { return probe(f(g.parameter("x", p.at("x")))); },
                     {{"x", rnd({4, 3}, rng, -2.0, 2.0)}}});
  cases.push_back({"layer_norm_rows", [P](Graph& g, const ParamSet& p) {
                     return probe(layer_norm_rows(P(g, p, "x"), P(g, p, "gamma"), P(g, p, "beta")));
                   },
                   {{"x", rnd({3, 5}, rng)}, {"gamma", rnd({5}, rng, 0.5, 1.5)}, {"beta", rnd({5}, rng)}}});
  cases.push_back({"weighted_row_sum", [P](Graph& g, const ParamSet& p) {
                     return probe(weighted_row_sum(P(g, p, "w"), P(g, p, "v")));
                   },
                   {{"w", rnd({2, 3}, rng)}, {"v", rnd({6, 4}, rng)}}});
  cases.push_back({"conv3x3", [P](Graph& g, const ParamSet& p) {
                     return probe(conv3x3(P(g, p, "x"), P(g, p, "w"), P(g, p, "b")));
                   },
                   {{"x", rnd({2, 2, 5, 4}, rng)}, {"w", rnd({3, 2, 3, 3}, rng)}, {"b", rnd({3}, rng)}}});
  cases.push_back({"max_pool2x2", [P](Graph& g, const ParamSet& p) { return probe(max_pool2x2(P(g, p, "x"))); },
                   {{"x", rnd({1, 2, 4, 6}, rng)}}});
  cases.push_back({"global_avg_pool", [P](Graph& g, const ParamSet& p) { return probe(global_avg_pool(P(g, p, "x"))); },
                   {{"x", rnd({2, 3, 4, 4}, rng)}}});

  // Module-level composites.
  {
    Points pts(kNumLandmarks, 3);
    for (Eigen::Index i = 0; i < pts.size(); ++i) pts.data()[i] = rnd({1}, rng)[0];
    auto topo = std::make_shared<Incidence>(build_topology(pts, 4));
    cases.push_back({"hyperconv", [P, topo](Graph& g, const ParamSet& p) {
                       return probe(hyperconv_forward(P(g, p, "x"), *topo, P(g, p, "w"), P(g, p, "theta")));
                     },
                     {{"x", rnd({kNumNodes, 3}, rng)},
                      {"w", rnd({kNumHyperedges}, rng, 0.5, 1.5)},
                      {"theta", rnd({3, 4}, rng)}}});
  }
  cases.push_back({"attention_pool", [P](Graph& g, const ParamSet& p) {
                     auto r = attention_pool_frames(P(g, p, "x"), 2, {P(g, p, "W_a"), P(g, p, "b_a"), P(g, p, "w_a")});
                     return add(probe(r.z), probe(r.alphas));
                   },
                   {{"x", rnd({2 * kNumLandmarks, 4}, rng)},
                    {"W_a", rnd({4, 3}, rng)},
                    {"b_a", rnd({3}, rng)},
                    {"w_a", rnd({3, 1}, rng)}}});
  cases.push_back({"selective_scan", [P](Graph& g, const ParamSet& p) {
                     SsmParams sp{P(g, p, "A_log"), P(g, p, "B_proj"), P(g, p, "C_proj"), P(g, p, "dt_w"),
                                  P(g, p, "dt_b")};
                     Var z = P(g, p, "z");
                     return add(probe(selective_scan(z, sp, ScanDirection::Forward)),
                                probe(selective_scan(z, sp, ScanDirection::Backward)));
                   },
                   {{"z", rnd({6, 3}, rng)},
                    {"A_log", rnd({3, 4}, rng, -0.5, 1.0)},
                    {"B_proj", rnd({3, 4}, rng)},
                    {"C_proj", rnd({3, 4}, rng)},
                    {"dt_w", rnd({3, 3}, rng)},
                    {"dt_b", rnd({3}, rng)}}});
  cases.push_back({"bimamba", [P](Graph& g, const ParamSet& p) {
                     auto dir = [&](const std::string& q) {
                       return SsmParams{g.parameter(q + "A_log", p.at(q + "A_log")),
                                        g.parameter(q + "B_proj", p.at(q + "B_proj")),
                                        g.parameter(q + "C_proj", p.at(q + "C_proj")),
                                        g.parameter(q + "dt_w", p.at(q + "dt_w")),
                                        g.parameter(q + "dt_b", p.at(q + "dt_b"))};
                     };
                     BiMambaParams bp{P(g, p, "gamma"), P(g, p, "beta"), dir("f."), dir("b."), true};
                     return probe(bimamba_forward(P(g, p, "z"), bp));
                   },
                   [&] {
                     ParamSet ps{{"z", rnd({5, 3}, rng)}, {"gamma", rnd({3}, rng, 0.5, 1.5)}, {"beta", rnd({3}, rng)}};
                     for (std::string q : {"f.", "b."}) {
                       ps[q + "A_log"] = rnd({3, 2}, rng, -0.5, 1.0);
                       ps[q + "B_proj"] = rnd({3, 2}, rng);
                       ps[q + "C_proj"] = rnd({3, 2}, rng);
                       ps[q + "dt_w"] = rnd({3, 3}, rng);
                       ps[q + "dt_b"] = rnd({3}, rng);
                     }
                     return ps;
                   }()});
  {
    const std::vector<int> labels{0, 2, 1, 2};
    cases.push_back({"focal_center_loss", [P, labels](Graph& g, const ParamSet& p) {
                       LossConfig cfg;
                       cfg.alpha = {0.25, 0.5, 0.75};
                       cfg.lambda = 0.3;
                       return total_loss(P(g, p, "logits"), P(g, p, "v"), labels, P(g, p, "centers"), cfg);
                     },
                     {{"logits", rnd({4, 3}, rng, -2.0, 2.0)}, {"v", rnd({4, 5}, rng)}, {"centers", rnd({3, 5}, rng)}}});
  }
  {
    std::mt19937_64 r2(seed + 7);
    const Tensor img = rnd({2, 3, 32, 32}, r2, 0.0, 1.0);
    const Tensor pts = rnd({kNumLandmarks, 3}, r2);
    ParamSet ps;
    ps["c1w"] = uniform_fan_in({8, 3, 3, 3}, 27, r2);
    ps["c1b"] = rnd({8}, r2, -0.1, 0.1);
    ps["c2w"] = uniform_fan_in({16, 8, 3, 3}, 72, r2);
    ps["c2b"] = rnd({16}, r2, -0.1, 0.1);
    ps["fcw"] = rnd({16, 4}, r2);
    ps["fcb"] = rnd({4}, r2);
    ps["pw"] = rnd({3, 4}, r2);
    ps["pb"] = rnd({4}, r2);
    cases.push_back({"encoders", [P, img, pts](Graph& g, const ParamSet& p) {
                       MicroCnn cnn{P(g, p, "c1w"), P(g, p, "c1b"), P(g, p, "c2w"),
                                    P(g, p, "c2b"), P(g, p, "fcw"), P(g, p, "fcb")};
                       GeoProjection proj{P(g, p, "pw"), P(g, p, "pb")};
                       return add(probe(encode_patches(g.constant(img), cnn)), probe(project_geo(g.constant(pts), proj)));
                     },
                     ps});
  }

  // End to end: loss of the toy model on one clip, through every parameter and the centers.
  {
    const ModelConfig mc = toy_model_config();
    auto clip = std::make_shared<ClipInput>(toy_clip(mc, seed));
    ParamSet ps = init_params(mc);
    std::mt19937_64 r4(seed + 13);
    // Move off the symmetric init so edge weights, centers and biases all carry signal.
    for (auto& [name, t] : ps)
      if (name.find("bias") != std::string::npos || name == "attn.b")
        for (auto& v : t.values()) v = rnd({1}, r4, -0.2, 0.2)[0];
    for (auto& v : ps.at("hyper.edge_weight").values()) v = rnd({1}, r4, 0.5, 1.5)[0];
    ps["centers"] = rnd({mc.num_classes, mc.d_out}, r4);
    cases.push_back({"full_pipeline", [clip, mc](Graph& g, const ParamSet& p) {
                       ParamSet model = p;
                       model.erase("centers");
                       ClipOutput out = forward_clip(g, *clip, model, mc);
                       Var centers = g.parameter("centers", p.at("centers"));
                       LossConfig lc;
                       lc.lambda = 0.1;
                       return total_loss(reshape(out.logits, {1, mc.num_classes}), reshape(out.feature, {1, mc.d_out}),
                                         {clip->label}, centers, lc);
                     },
                     ps});
  }
  return cases;
}

std::vector<GradCaseResult> run_gradcheck(std::uint64_t seed, double step, double tol) {
  std::vector<GradCaseResult> out;
  for (const auto& c : gradcheck_cases(seed)) out.push_back({c.name, check_gradients(c.build, c.params, step, tol)});
  return out;
}

}  // namespace hst
