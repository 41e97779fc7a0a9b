#include "hst/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>

#include "hst/bench.hpp"
#include "hst/checkpoint.hpp"
#include "hst/datagen.hpp"
#include "hst/gradcheck.hpp"
#include "hst/train.hpp"

namespace hst {

namespace {

const char* const kClassNames[3] = {"normal", "talking", "yawning"};

struct SeedOpt {
  std::uint64_t value = 42;
  CLI::Option* opt = nullptr;
};

void add_seed(CLI::App* app, SeedOpt& s) {
  s.opt = app->add_option("--seed", s.value, "Random seed (falls back to $HST_SEED, then 42)");
}

std::uint64_t resolve_seed(const SeedOpt& s) {
  if (s.opt && s.opt->count() > 0) return s.value;
  if (const char* env = std::getenv("HST_SEED")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') fail(ErrorKind::InvalidArgument, "HST_SEED is not an unsigned integer");
    return v;
  }
  return s.value;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(ErrorKind::Io, "cannot open for writing: " + path);
  f << std::setprecision(17);
  return f;
}

std::vector<std::size_t> split_indices(const Container& data, const std::string& which, std::uint64_t split_seed) {
  if (which == "all") {
    std::vector<std::size_t> all(data.sequences.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  const Split sp = split_by_subject(data, split_seed);
  if (which == "train") return sp.train;
  if (which == "val") return sp.val;
  return sp.test;
}

void print_metrics(std::ostream& out, const std::string& prefix, const Metrics& m) {
  out << prefix << "accuracy=" << std::setprecision(6) << std::fixed << m.accuracy << '\n';
  out << prefix << "macro_f1=" << m.macro_f1 << '\n';
  out.unsetf(std::ios::fixed);
  for (std::size_t r = 0; r < m.confusion.size(); ++r) {
    out << prefix << "confusion_" << kClassNames[std::min<std::size_t>(r, 2)] << '=';
    for (std::size_t c = 0; c < m.confusion[r].size(); ++c) out << (c ? "," : "") << m.confusion[r][c];
    out << '\n';
  }
}

TemporalMode parse_temporal(const std::string& s) {
  return s == "maxpool" ? TemporalMode::MaxPool : TemporalMode::BiMamba;
}

struct ModelFlags {
  ModelConfig cfg;
  std::string temporal = "bimamba";
  void attach(CLI::App* app) {
    app->add_option("--T", cfg.T, "Sampled frames per clip")->check(CLI::PositiveNumber);
    app->add_option("--K", cfg.K, "Nearest neighbours per geometric hyperedge")->check(CLI::Range(1, 67));
    app->add_option("--d", cfg.d, "Shared latent width")->check(CLI::PositiveNumber);
    app->add_option("--d-out", cfg.d_out, "Hypergraph output width")->check(CLI::PositiveNumber);
    app->add_option("--d-a", cfg.d_a, "Attention hidden width")->check(CLI::PositiveNumber);
    app->add_option("--state", cfg.n, "SSM state size")->check(CLI::PositiveNumber);
    app->add_option("--depth", cfg.depth, "Bi-Mamba blocks")->check(CLI::PositiveNumber);
    app->add_option("--temporal", temporal, "Temporal engine")->check(CLI::IsMember({"bimamba", "maxpool"}));
  }
  ModelConfig resolved() const {
    ModelConfig c = cfg;
    c.temporal = parse_temporal(temporal);
    return c;
  }
};

int cmd_synth(std::ostream& out, std::ostream& err, SynthConfig cfg, const std::string& path,
              const std::string& texture, const std::string& mix, bool no_blinks, std::size_t threads) {
  cfg.texture = texture == "patches" ? TextureMode::Patches : TextureMode::Embeddings;
  cfg.blinks = !no_blinks;
  {
    std::stringstream ss(mix);
    std::string tok;
    std::vector<double> v;
    while (std::getline(ss, tok, ',')) {
      try {
        v.push_back(std::stod(tok));
      } catch (const std::exception&) {
        fail(ErrorKind::InvalidArgument, "--mix: not a number: " + tok);
      }
    }
    if (v.size() != 3) fail(ErrorKind::InvalidArgument, "--mix needs three comma-separated fractions");
    cfg.class_mix = {v[0], v[1], v[2]};
  }
  const auto t0 = std::chrono::steady_clock::now();
  GeneratedDataset ds = generate_dataset(cfg, threads);
  write_container(path, ds.data);
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& s : ds.data.sequences) ++counts[s.label];
  out << "sequences=" << ds.data.sequences.size() << '\n';
  for (int c = 0; c < 3; ++c) out << kClassNames[c] << '=' << counts[c] << '\n';
  out << "train_clips=" << ds.split.train.size() << "\nval_clips=" << ds.split.val.size()
      << "\ntest_clips=" << ds.split.test.size() << '\n';
  err << "wrote " << path << " in "
      << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"hst: hypergraph + selective state-space fatigue classifier"};
  app.name("hst");
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic landmark/texture dataset container");
  SynthConfig scfg;
  std::string synth_out, synth_texture = "embeddings", synth_mix = "0.5,0.25,0.25";
  bool no_blinks = false;
  std::size_t synth_threads = 0;
  SeedOpt synth_seed;
  synth->add_option("--out", synth_out, "Output container path")->required();
  synth->add_option("--n", scfg.n_sequences, "Number of sequences");
  synth->add_option("--frames", scfg.frames, "Raw frames per clip")->check(CLI::PositiveNumber);
  synth->add_option("--fps", scfg.fps, "Nominal frame rate")->check(CLI::PositiveNumber);
  synth->add_option("--subjects", scfg.subjects, "Distinct subjects")->check(CLI::Range(5, 1 << 30));
  synth->add_option("--mix", synth_mix, "Class fractions normal,talking,yawning");
  synth->add_option("--noise", scfg.noise, "Per-frame observation noise (face-scale units)")->check(CLI::NonNegativeNumber);
  synth->add_option("--rigid", scfg.rigid, "Head-motion amplitude multiplier")->check(CLI::NonNegativeNumber);
  synth->add_flag("--no-blinks", no_blinks, "Disable blinks");
  synth->add_option("--texture", synth_texture, "Texture payload")->check(CLI::IsMember({"embeddings", "patches"}));
  synth->add_option("--threads", synth_threads, "Worker threads (0 = all cores)");
  add_seed(synth, synth_seed);

  // train
  auto* trn = app.add_subcommand("train", "Train on the subject-disjoint training split");
  std::string train_data, train_out;
  TrainConfig tcfg;
  ModelFlags train_model;
  double alpha = 0.25;
  std::uint64_t train_split_seed = 0;
  bool no_val = false;
  SeedOpt train_seed;
  trn->add_option("--data", train_data, "Dataset container")->required();
  trn->add_option("--out", train_out, "Checkpoint to write")->required();
  trn->add_option("--epochs", tcfg.epochs, "Epochs")->check(CLI::PositiveNumber);
  trn->add_option("--batch", tcfg.batch, "Batch size")->check(CLI::PositiveNumber);
  trn->add_option("--lr", tcfg.lr, "Adam learning rate")->check(CLI::PositiveNumber);
  trn->add_option("--weight-decay", tcfg.weight_decay, "Decoupled weight decay")->check(CLI::NonNegativeNumber);
  trn->add_option("--center-lr", tcfg.center_lr, "SGD learning rate for class centers")->check(CLI::NonNegativeNumber);
  trn->add_option("--alpha", alpha, "Focal alpha (all classes)")->check(CLI::NonNegativeNumber);
  trn->add_option("--gamma", tcfg.loss.gamma, "Focal gamma")->check(CLI::NonNegativeNumber);
  trn->add_option("--lambda", tcfg.loss.lambda, "Center loss weight")->check(CLI::NonNegativeNumber);
  trn->add_option("--split-seed", train_split_seed, "Seed of the subject split");
  trn->add_flag("--no-val", no_val, "Skip per-epoch validation");
  trn->add_option("--threads", tcfg.threads, "Worker threads (0 = all cores)");
  train_model.attach(trn);
  add_seed(trn, train_seed);

  // eval
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  std::string eval_data, eval_model, eval_split = "test";
  std::uint64_t eval_split_seed = 0;
  std::size_t eval_threads = 0;
  evl->add_option("--data", eval_data, "Dataset container")->required();
  evl->add_option("--model", eval_model, "Checkpoint")->required();
  evl->add_option("--split", eval_split, "Split")->check(CLI::IsMember({"train", "val", "test", "all"}));
  evl->add_option("--split-seed", eval_split_seed, "Seed of the subject split");
  evl->add_option("--threads", eval_threads, "Worker threads (0 = all cores)");

  // infer
  auto* inf = app.add_subcommand("infer", "Classify every clip of a container and export explanations");
  std::string infer_model, infer_input, explain_csv, saliency_csv, features_csv;
  std::size_t infer_threads = 0;
  inf->add_option("--model", infer_model, "Checkpoint")->required();
  inf->add_option("--input", infer_input, "Dataset container with one or more clips")->required();
  inf->add_option("--explain", explain_csv, "CSV of per-frame node attention weights");
  inf->add_option("--saliency", saliency_csv, "CSV of temporal contribution density");
  inf->add_option("--features", features_csv, "CSV of pooled clip features");
  inf->add_option("--threads", infer_threads, "Worker threads (0 = all cores)");

  // inspect
  auto* ins = app.add_subcommand("inspect", "Export learned hyperedge weights and the most active hyperedges");
  std::string ins_model, ins_input, ins_out;
  std::size_t ins_clip = 0, ins_frame = 0, ins_top = 8;
  ins->add_option("--model", ins_model, "Checkpoint")->required();
  ins->add_option("--input", ins_input, "Dataset container")->required();
  ins->add_option("--out", ins_out, "CSV to write")->required();
  ins->add_option("--clip", ins_clip, "Clip index in the container");
  ins->add_option("--frame", ins_frame, "Sampled frame whose incidence is exported");
  ins->add_option("--top", ins_top, "Hyperedges flagged as most active")->check(CLI::Range(1, 71));

  // params
  auto* prm = app.add_subcommand("params", "Report the trainable parameter count of a configuration");
  ModelFlags params_model;
  std::string params_texture = "patches";
  params_model.attach(prm);
  prm->add_option("--texture", params_texture, "Texture input")->check(CLI::IsMember({"patches", "embeddings"}));

  // bench
  auto* bch = app.add_subcommand("bench", "Time the Bi-Mamba engine against quadratic attention");
  BenchConfig bcfg;
  std::string bench_csv_path;
  SeedOpt bench_seed;
  bch->add_option("--lengths", bcfg.lengths, "Sequence lengths")->delimiter(',');
  bch->add_option("--repeats", bcfg.repeats, "Timed repeats per length")->check(CLI::Range(5, 1000));
  bch->add_option("--d-out", bcfg.d_out, "Feature width")->check(CLI::PositiveNumber);
  bch->add_option("--state", bcfg.n, "SSM state size")->check(CLI::PositiveNumber);
  bch->add_option("--csv", bench_csv_path, "Write the CSV here instead of standard output");
  add_seed(bch, bench_seed);

  // gradcheck
  auto* gck = app.add_subcommand("gradcheck", "Finite-difference certification of every differentiable op");
  double gc_step = 1e-5, gc_tol = 1e-4;
  SeedOpt gc_seed;
  gck->add_option("--step", gc_step, "Central difference step")->check(CLI::PositiveNumber);
  gck->add_option("--tol", gc_tol, "Relative error tolerance")->check(CLI::PositiveNumber);
  add_seed(gck, gc_seed);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e, out, err);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return 1;
  }

  try {
    if (*synth) {
      scfg.seed = resolve_seed(synth_seed);
      return cmd_synth(out, err, scfg, synth_out, synth_texture, synth_mix, no_blinks, synth_threads);
    }

    if (*trn) {
      const auto t0 = std::chrono::steady_clock::now();
      tcfg.seed = resolve_seed(train_seed);
      tcfg.loss.alpha.assign(kNumClasses, alpha);
      const Container data = read_container(train_data);
      ModelConfig mc = train_model.resolved();
      mc.seed = tcfg.seed;
      mc.texture = data.mode;
      mc.d_tex = data.mode == TextureMode::Embeddings ? data.d_tex : kTrunkWidth;
      const Split sp = split_by_subject(data, train_split_seed);
      const CanonicalTemplate tmpl = CanonicalTemplate::load_default();
      const auto train_clips = prepare_clips(data, sp.train, mc, tmpl, tcfg.threads);
      std::vector<ClipInput> val_clips;
      if (!no_val && !sp.val.empty()) val_clips = prepare_clips(data, sp.val, mc, tmpl, tcfg.threads);
      TrainState state = init_model(mc);
      out << "params=" << count_params(state.params) << '\n';
      err << "train clips " << train_clips.size() << ", val clips " << val_clips.size() << '\n';
      train(state, train_clips, val_clips.empty() ? nullptr : &val_clips, tcfg, [&](const EpochLog& e) {
        out << format_epoch(e) << std::endl;
        err << "epoch " << e.epoch << " took " << std::fixed << std::setprecision(1) << e.seconds << " s\n"
            << std::defaultfloat << std::setprecision(6);
      });
      save_checkpoint(state, train_out);
      err << "saved " << train_out << " after "
          << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
      return 0;
    }

    if (*evl) {
      const TrainState state = load_checkpoint(eval_model);
      const Container data = read_container(eval_data);
      const auto idx = split_indices(data, eval_split, eval_split_seed);
      if (idx.empty()) fail(ErrorKind::InvalidArgument, "split '" + eval_split + "' is empty");
      const auto clips = prepare_clips(data, idx, state.model, CanonicalTemplate::load_default(), eval_threads);
      out << "split=" << eval_split << "\nclips=" << clips.size() << '\n';
      print_metrics(out, "", evaluate(clips, state, eval_threads));
      return 0;
    }

    if (*inf) {
      const TrainState state = load_checkpoint(infer_model);
      const Container data = read_container(infer_input);
      std::vector<std::size_t> idx(data.sequences.size());
      std::iota(idx.begin(), idx.end(), 0);
      if (idx.empty()) fail(ErrorKind::InvalidArgument, "input container has no clips");
      const auto clips = prepare_clips(data, idx, state.model, CanonicalTemplate::load_default(), infer_threads);
      std::optional<std::ofstream> ex, sal, feat;
      if (!explain_csv.empty()) (ex = open_out(explain_csv)).value() << "clip,frame,node_index,alpha\n";
      if (!saliency_csv.empty()) (sal = open_out(saliency_csv)).value() << "clip,frame_index,density\n";
      if (!features_csv.empty()) {
        feat = open_out(features_csv);
        *feat << "clip,label";
        for (std::size_t c = 0; c < state.model.d_out; ++c) *feat << ",v" << c;
        *feat << '\n';
      }
      for (std::size_t i = 0; i < clips.size(); ++i) {
        const Prediction p = predict(clips[i], state);
        out << "clip=" << i << " label=" << kClassNames[clips[i].label % 3] << " prediction=" << kClassNames[p.label % 3];
        for (std::size_t c = 0; c < p.probabilities.size(); ++c)
          out << " p_" << kClassNames[c % 3] << '=' << std::fixed << std::setprecision(6) << p.probabilities[c];
        out << std::defaultfloat << '\n';
        if (ex)
          for (std::size_t t = 0; t < p.alphas.rows(); ++t)
            for (std::size_t v = 0; v < p.alphas.cols(); ++v) *ex << i << ',' << t << ',' << v << ',' << p.alphas.at(t, v) << '\n';
        if (sal)
          for (std::size_t t = 0; t < p.saliency.density.size(); ++t) *sal << i << ',' << t << ',' << p.saliency.density[t] << '\n';
        if (feat) {
          *feat << i << ',' << clips[i].label;
          for (double v : p.feature.values()) *feat << ',' << v;
          *feat << '\n';
        }
      }
      return 0;
    }

    if (*ins) {
      const TrainState state = load_checkpoint(ins_model);
      const Container data = read_container(ins_input);
      if (ins_clip >= data.sequences.size()) fail(ErrorKind::InvalidArgument, "--clip is out of range");
      if (ins_frame >= state.model.T) fail(ErrorKind::InvalidArgument, "--frame is out of range");
      const auto clips = prepare_clips(data, {ins_clip}, state.model, CanonicalTemplate::load_default(), 1);
      const Incidence& H = clips[0].topology[ins_frame];
      const Tensor& W = state.params.at("hyper.edge_weight");
      std::vector<std::size_t> rank(W.size());
      std::iota(rank.begin(), rank.end(), 0);
      std::stable_sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) { return std::abs(W[a]) > std::abs(W[b]); });
      std::vector<std::size_t> pos(W.size());
      for (std::size_t r = 0; r < rank.size(); ++r) pos[rank[r]] = r + 1;
      auto f = open_out(ins_out);
      f << "edge,kind,weight,rank,top,members\n";
      for (std::size_t e = 0; e < W.size(); ++e) {
        f << e << ',' << (e < static_cast<std::size_t>(kNumLandmarks) ? "geo" : "tex") << ',' << W[e] << ',' << pos[e]
          << ',' << (pos[e] <= ins_top ? 1 : 0) << ',';
        const auto m = H.edge(e);
        for (std::size_t k = 0; k < m.size(); ++k) f << (k ? ";" : "") << static_cast<int>(m[k]);
        f << '\n';
      }
      out << "edges=" << W.size() << "\ntop=";
      for (std::size_t r = 0; r < ins_top; ++r) out << (r ? "," : "") << rank[r];
      out << '\n';
      return 0;
    }

    if (*prm) {
      ModelConfig mc = params_model.resolved();
      mc.texture = params_texture == "embeddings" ? TextureMode::Embeddings : TextureMode::Patches;
      for (const auto& g : param_groups(mc)) out << "params_" << g.name << '=' << g.count << '\n';
      out << "params=" << count_params(init_params(mc)) << '\n';
      out << "params_closed_form=" << expected_param_count(mc) << '\n';
      out << "centers=" << mc.num_classes * mc.d_out << '\n';
      return 0;
    }

    if (*bch) {
      bcfg.seed = resolve_seed(bench_seed);
      const BenchResult r = run_scaling(bcfg);
      const std::string csv = bench_csv(r);
      if (bench_csv_path.empty())
        out << csv;
      else
        open_out(bench_csv_path) << csv;
      for (const auto& m : r.methods) {
        out << "slope_" << m.method << '=' << m.slope << '\n';
        out << "memory_slope_" << m.method << '=' << m.memory_slope << '\n';
        out << "memory_ratio_" << m.method << '=' << m.peak_bytes.back() / m.peak_bytes.front() << '\n';
      }
      return 0;
    }

    if (*gck) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto results = run_gradcheck(resolve_seed(gc_seed), gc_step, gc_tol);
      bool ok = true;
      double worst = 0.0;
      for (const auto& r : results) {
        std::size_t checked = 0, excluded = 0;
        for (const auto& p : r.report.params) {
          checked += p.checked;
          excluded += p.excluded;
        }
        out << "case=" << r.name << " max_rel_error=" << std::scientific << std::setprecision(3)
            << r.report.max_rel_error << std::defaultfloat << " checked=" << checked << " excluded=" << excluded
            << " passed=" << (r.report.passed ? 1 : 0) << '\n';
        ok = ok && r.report.passed;
        worst = std::max(worst, r.report.max_rel_error);
      }
      out << "max_rel_error=" << std::scientific << std::setprecision(3) << worst << std::defaultfloat << '\n';
      out << "passed=" << (ok ? 1 : 0) << '\n';
      err << "gradcheck took " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
      return ok ? 0 : 2;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::InvalidArgument:
      case ErrorKind::Format:
      case ErrorKind::Io:
        return 1;
      default:
        return 2;
    }
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace hst
