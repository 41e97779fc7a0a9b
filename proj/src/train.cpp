#include "hst/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <random>

#include "hst/ops.hpp"
#include "hst/parallel.hpp"

namespace hst {

using namespace ad;

void TrainConfig::validate() const {
  require(epochs >= 1, "train config: epochs must be >= 1");
  require(batch >= 1, "train config: batch must be >= 1");
  require(lr > 0.0 && center_lr >= 0.0 && weight_decay >= 0.0, "train config: rates must be positive");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0, "train config: bad Adam constants");
}

TrainState init_model(const ModelConfig& cfg) {
  TrainState s;
  s.model = cfg;
  s.params = init_params(cfg);
  s.centers = Tensor({cfg.num_classes, cfg.d_out});
  for (const auto& [name, t] : s.params) {
    s.adam_m[name] = Tensor::zeros_like(t);
    s.adam_v[name] = Tensor::zeros_like(t);
  }
  s.shuffle_seed = cfg.seed;
  return s;
}

bool decays(const std::string& name, const Tensor& value) {
  return value.ndim() >= 2 && name.find("A_log") == std::string::npos;
}

Metrics metrics_from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  const std::size_t C = confusion.size();
  Metrics m;
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < C; ++i) {
    require(confusion[i].size() == C, "metrics: confusion matrix must be square");
    correct += confusion[i][i];
    for (auto v : confusion[i]) total += v;
  }
  require(total > 0, "metrics: empty confusion matrix");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(total);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t fp = 0, fn = 0;
    for (std::size_t o = 0; o < C; ++o) {
      if (o == c) continue;
      fp += confusion[o][c];
      fn += confusion[c][o];
    }
    const double tp = static_cast<double>(confusion[c][c]);
    const double denom = 2.0 * tp + static_cast<double>(fp + fn);
    f1_sum += denom > 0.0 ? 2.0 * tp / denom : 0.0;
  }
  m.macro_f1 = f1_sum / static_cast<double>(C);
  m.confusion = std::move(confusion);
  return m;
}

std::string format_epoch(const EpochLog& e) {
  char buf[256];
  int n = std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.6f train_accuracy=%.4f train_macro_f1=%.4f", e.epoch, e.loss,
                        e.train_accuracy, e.train_macro_f1);
  if (e.has_val)
    n += std::snprintf(buf + n, sizeof buf - n, " val_accuracy=%.4f val_macro_f1=%.4f", e.val_accuracy, e.val_macro_f1);
  std::snprintf(buf + n, sizeof buf - n, " min_edge_weight=%.4f", e.min_edge_weight);
  return buf;
}

namespace {

Tensor row_of(const Tensor& m, std::size_t r) {
  const std::size_t c = m.cols();
  return Tensor({c}, std::span<const double>(m.data() + r * c, c));
}

std::size_t argmax(const Tensor& t) {
  return static_cast<std::size_t>(std::max_element(t.values().begin(), t.values().end()) - t.values().begin());
}

std::vector<std::vector<std::size_t>> empty_confusion(std::size_t C) {
  return std::vector<std::vector<std::size_t>>(C, std::vector<std::size_t>(C, 0));
}

void adam_step(TrainState& s, const ParamSet& grads, const TrainConfig& cfg) {
  ++s.step;
  const double t = static_cast<double>(s.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : s.params) {
    const Tensor& g = grads.at(name);
    Tensor& m = s.adam_m.at(name);
    Tensor& v = s.adam_v.at(name);
    const double shrink = decays(name, p) ? 1.0 - cfg.lr * cfg.weight_decay : 1.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      p[i] = p[i] * shrink - cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace

std::vector<EpochLog> train(TrainState& state, const std::vector<ClipInput>& train_set,
                            const std::vector<ClipInput>* val_set, const TrainConfig& cfg,
                            const EpochCallback& on_epoch) {
  cfg.validate();
  state.model.validate();
  const std::size_t C = state.model.num_classes;
  cfg.loss.validate(C);
  if (train_set.empty()) fail(ErrorKind::InvalidArgument, "train: empty training split");
  if (val_set && val_set->empty()) fail(ErrorKind::InvalidArgument, "train: empty validation split");
  std::vector<bool> seen(C, false);
  for (const auto& c : train_set) {
    require(c.label >= 0 && static_cast<std::size_t>(c.label) < C, "train: clip label out of range");
    seen[static_cast<std::size_t>(c.label)] = true;
  }
  require(std::count(seen.begin(), seen.end(), true) >= 2, "train: training split needs at least two classes");
  const std::size_t B = cfg.batch;
  const std::size_t batches = train_set.size() / B;
  if (batches == 0) fail(ErrorKind::InvalidArgument, "train: training split smaller than one batch");
  const std::size_t d_out = state.model.d_out;

  std::vector<EpochLog> logs;
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(state.shuffle_seed ^ (0x9e3779b97f4a7c15ULL * (state.epoch + 1)));
    std::shuffle(order.begin(), order.end(), rng);

    double loss_sum = 0.0;
    auto confusion = empty_confusion(C);
    for (std::size_t b = 0; b < batches; ++b) {
      std::vector<std::unique_ptr<Graph>> graphs(B);
      std::vector<ClipOutput> outs(B);
      std::vector<int> labels(B);
      for (std::size_t i = 0; i < B; ++i) labels[i] = train_set[order[b * B + i]].label;
      parallel_for(B, cfg.threads, [&](std::size_t i) {
        graphs[i] = std::make_unique<Graph>();
        outs[i] = forward_clip(*graphs[i], train_set[order[b * B + i]], state.params, state.model);
      });

      // Batch objective on its own small graph; its input gradients seed each clip.
      Tensor L({B, C}), V({B, d_out});
      for (std::size_t i = 0; i < B; ++i) {
        std::copy_n(outs[i].logits.value().data(), C, L.data() + i * C);
        std::copy_n(outs[i].feature.value().data(), d_out, V.data() + i * d_out);
        ++confusion[static_cast<std::size_t>(labels[i])][argmax(outs[i].logits.value())];
      }
      Graph lg;
      Var lv = lg.parameter("logits", L);
      Var fv = lg.parameter("features", V);
      Var cv = lg.parameter("centers", state.centers);
      Var total = total_loss(lv, fv, labels, cv, cfg.loss);
      loss_sum += total.value()[0];
      auto lgrads = lg.backward(total);

      std::vector<std::map<std::string, Tensor>> clip_grads(B);
      parallel_for(B, cfg.threads, [&](std::size_t i) {
        clip_grads[i] = graphs[i]->backward(
            {{outs[i].logits, row_of(lgrads.at("logits"), i)}, {outs[i].feature, row_of(lgrads.at("features"), i)}});
        graphs[i].reset();
      });
      ParamSet grads = std::move(clip_grads[0]);
      for (std::size_t i = 1; i < B; ++i)
        for (auto& [name, g] : grads) {
          const Tensor& gi = clip_grads[i].at(name);
          for (std::size_t k = 0; k < g.size(); ++k) g[k] += gi[k];
        }
      adam_step(state, grads, cfg);
      const Tensor& gc = lgrads.at("centers");
      for (std::size_t k = 0; k < state.centers.size(); ++k) state.centers[k] -= cfg.center_lr * gc[k];
    }
    ++state.epoch;

    EpochLog log;
    log.epoch = state.epoch;
    log.loss = loss_sum / static_cast<double>(batches);
    Metrics tm = metrics_from_confusion(std::move(confusion));
    log.train_accuracy = tm.accuracy;
    log.train_macro_f1 = tm.macro_f1;
    if (val_set) {
      Metrics vm = evaluate(*val_set, state, cfg.threads);
      log.has_val = true;
      log.val_accuracy = vm.accuracy;
      log.val_macro_f1 = vm.macro_f1;
    }
    const Tensor& w = state.params.at("hyper.edge_weight");
    log.min_edge_weight = *std::min_element(w.values().begin(), w.values().end());
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return logs;
}

Prediction predict(const ClipInput& clip, const TrainState& state) {
  Graph g;
  ClipOutput out = forward_clip(g, clip, state.params, state.model);
  Prediction p;
  p.logits = out.logits.value();
  p.feature = out.feature.value();
  p.alphas = out.alphas;
  p.saliency = out.saliency;
  p.probabilities = Tensor::zeros_like(p.logits);
  const double mx = *std::max_element(p.logits.values().begin(), p.logits.values().end());
  double z = 0.0;
  for (std::size_t i = 0; i < p.logits.size(); ++i) z += (p.probabilities[i] = std::exp(p.logits[i] - mx));
  for (auto& v : p.probabilities.values()) v /= z;
  p.label = static_cast<int>(argmax(p.logits));
  return p;
}

Metrics evaluate(const std::vector<ClipInput>& split, const TrainState& state, std::size_t threads) {
  if (split.empty()) fail(ErrorKind::InvalidArgument, "evaluate: empty split");
  const std::size_t C = state.model.num_classes;
  std::vector<int> pred(split.size());
  parallel_for(split.size(), threads, [&](std::size_t i) { pred[i] = predict(split[i], state).label; });
  auto confusion = empty_confusion(C);
  for (std::size_t i = 0; i < split.size(); ++i) {
    require(split[i].label >= 0 && static_cast<std::size_t>(split[i].label) < C, "evaluate: clip label out of range");
    ++confusion[static_cast<std::size_t>(split[i].label)][static_cast<std::size_t>(pred[i])];
  }
  return metrics_from_confusion(std::move(confusion));
}

}  // namespace hst
