#include "hst/checkpoint.hpp"

#include <cmath>
#include <map>

#include "binary_io.hpp"

namespace hst {

namespace {

constexpr char kMagic[4] = {'H', 'S', 'T', 'W'};

// Config and counters travel as small f64 tensors next to the parameters.
Tensor model_meta(const ModelConfig& m) {
  return Tensor({12}, {static_cast<double>(m.T), static_cast<double>(m.K), static_cast<double>(m.d),
                       static_cast<double>(m.d_out), static_cast<double>(m.d_a), static_cast<double>(m.n),
                       static_cast<double>(m.depth), static_cast<double>(m.num_classes),
                       static_cast<double>(m.seed >> 32), static_cast<double>(m.seed & 0xffffffffULL),
                       static_cast<double>(m.temporal), static_cast<double>(m.texture)});
}

std::size_t as_count(double v) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 4294967295.0) fail(ErrorKind::Format, "checkpoint: corrupt metadata");
  return static_cast<std::size_t>(v);
}

ModelConfig model_from_meta(const Tensor& t, std::size_t d_tex) {
  if (t.size() != 12) fail(ErrorKind::Format, "checkpoint: corrupt model metadata");
  ModelConfig m;
  m.T = as_count(t[0]);
  m.K = as_count(t[1]);
  m.d = as_count(t[2]);
  m.d_out = as_count(t[3]);
  m.d_a = as_count(t[4]);
  m.n = as_count(t[5]);
  m.depth = as_count(t[6]);
  m.num_classes = as_count(t[7]);
  m.seed = (static_cast<std::uint64_t>(as_count(t[8])) << 32) | as_count(t[9]);
  m.temporal = static_cast<TemporalMode>(as_count(t[10]));
  m.texture = static_cast<TextureMode>(as_count(t[11]));
  m.d_tex = d_tex;
  return m;
}

Tensor u64_pair(std::uint64_t v) {
  return Tensor({2}, {static_cast<double>(v >> 32), static_cast<double>(v & 0xffffffffULL)});
}

std::uint64_t from_pair(const Tensor& t) {
  if (t.size() != 2) fail(ErrorKind::Format, "checkpoint: corrupt counter");
  return (static_cast<std::uint64_t>(as_count(t[0])) << 32) | as_count(t[1]);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TrainState& s) {
  std::map<std::string, const Tensor*> entries;
  for (const auto& [n, t] : s.params) entries["param/" + n] = &t;
  for (const auto& [n, t] : s.adam_m) entries["adam_m/" + n] = &t;
  for (const auto& [n, t] : s.adam_v) entries["adam_v/" + n] = &t;
  entries["centers"] = &s.centers;
  const Tensor meta = model_meta(s.model);
  const Tensor d_tex({1}, {static_cast<double>(s.model.d_tex)});
  const Tensor step = u64_pair(s.step), epoch = u64_pair(s.epoch), shuffle = u64_pair(s.shuffle_seed);
  entries["meta/model"] = &meta;
  entries["meta/d_tex"] = &d_tex;
  entries["meta/step"] = &step;
  entries["meta/epoch"] = &epoch;
  entries["meta/shuffle_seed"] = &shuffle;

  io::ByteWriter w;
  w.text(std::string(kMagic, 4));
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t->ndim()));
    for (auto dim : t->shape()) w.u32(static_cast<std::uint32_t>(dim));
    for (double v : t->values()) w.f64(v);
  }
  std::uint64_t sum = 0;
  for (auto b : w.buffer()) sum += b;
  w.u64(sum);
  return std::move(w.buffer());
}

TrainState decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::string(bytes.begin(), bytes.begin() + 4) != std::string(kMagic, 4))
    fail(ErrorKind::Format, "not a checkpoint");
  if (bytes.size() < 20) fail(ErrorKind::Format, "truncated checkpoint");
  std::uint64_t sum = 0;
  for (auto b : bytes.first(bytes.size() - 8)) sum += b;
  io::ByteReader tail(bytes.subspan(bytes.size() - 8));

  io::ByteReader r(bytes.first(bytes.size() - 8));
  r.set_context("checkpoint header");
  r.text(4);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) fail(ErrorKind::Format, "unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    r.set_context("checkpoint tensor " + std::to_string(i));
    const std::uint32_t len = r.u32();
    if (len > r.remaining()) fail(ErrorKind::Format, "truncated checkpoint (tensor " + std::to_string(i) + ")");
    std::string name = r.text(len);
    const std::uint32_t ndim = r.u32();
    if (ndim == 0 || ndim > 8) fail(ErrorKind::Format, "checkpoint: bad rank for " + name);
    Shape shape(ndim);
    std::size_t numel = 1;
    for (auto& dim : shape) {
      dim = r.u32();
      if (dim == 0) fail(ErrorKind::Format, "checkpoint: zero dimension in " + name);
      numel *= dim;
      if (numel * 8 > r.remaining()) fail(ErrorKind::Format, "truncated checkpoint (" + name + ")");
    }
    Tensor t(shape);
    for (auto& v : t.values()) v = r.f64();
    if (!entries.emplace(std::move(name), std::move(t)).second) fail(ErrorKind::Format, "checkpoint: duplicate tensor");
  }
  if (r.remaining() != 0) fail(ErrorKind::Format, "checkpoint: trailing bytes");
  if (tail.u64() != sum) fail(ErrorKind::Format, "checkpoint integrity check failed");

  auto take = [&](const std::string& name) -> Tensor {
    auto it = entries.find(name);
    if (it == entries.end()) fail(ErrorKind::Format, "checkpoint: missing " + name);
    Tensor t = std::move(it->second);
    entries.erase(it);
    return t;
  };
  TrainState s;
  s.model = model_from_meta(take("meta/model"), as_count(take("meta/d_tex")[0]));
  try {
    s.model.validate();
  } catch (const Error& e) {
    fail(ErrorKind::Format, std::string("checkpoint: invalid model config: ") + e.what());
  }
  s.step = from_pair(take("meta/step"));
  s.epoch = from_pair(take("meta/epoch"));
  s.shuffle_seed = from_pair(take("meta/shuffle_seed"));
  s.centers = take("centers");
  const ad::ParamSet ref = init_params(s.model);
  for (const auto& [name, t] : ref) {
    s.params[name] = take("param/" + name);
    s.adam_m[name] = take("adam_m/" + name);
    s.adam_v[name] = take("adam_v/" + name);
    for (const Tensor* x : {&s.params[name], &s.adam_m[name], &s.adam_v[name]})
      if (x->shape() != t.shape()) fail(ErrorKind::Format, "checkpoint: shape mismatch for " + name);
  }
  if (s.centers.shape() != Shape{s.model.num_classes, s.model.d_out})
    fail(ErrorKind::Format, "checkpoint: centers have the wrong shape");
  if (!entries.empty()) fail(ErrorKind::Format, "checkpoint: unexpected tensor " + entries.begin()->first);
  return s;
}

void save_checkpoint(const TrainState& state, const std::string& path) {
  io::write_file(path, encode_checkpoint(state));
}

TrainState load_checkpoint(const std::string& path) {
  auto bytes = io::read_file(path, "checkpoint");
  try {
    return decode_checkpoint(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path + ": " + e.what());
  }
}

}  // namespace hst
