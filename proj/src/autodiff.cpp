#include "hst/autodiff.hpp"

#include <algorithm>
#include <cmath>

namespace hst::ad {

const Tensor& Var::value() const {
  if (graph == nullptr) fail(ErrorKind::InvalidArgument, "unbound variable");
  return graph->value(*this);
}

const Tensor& BackwardContext::out() const { return graph_->nodes_[node_].value; }

const Tensor& BackwardContext::in(std::size_t k) const {
  return graph_->nodes_[graph_->nodes_[node_].inputs.at(k)].value;
}

bool BackwardContext::needs(std::size_t k) const {
  return graph_->nodes_[graph_->nodes_[node_].inputs.at(k)].requires_grad;
}

Tensor& BackwardContext::grad_in(std::size_t k) {
  const std::size_t id = graph_->nodes_[node_].inputs.at(k);
  auto& slot = graph_->grads_[id];
  if (!slot) slot.emplace(graph_->nodes_[id].value.shape());
  return *slot;
}

Var Graph::check(Var v) const {
  if (v.graph != this || v.id >= nodes_.size())
    fail(ErrorKind::InvalidArgument, "variable does not belong to this graph");
  return v;
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{"constant", {}, std::move(value), nullptr, false, std::nullopt});
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(const std::string& name, Tensor value) {
  if (params_.count(name)) fail(ErrorKind::InvalidArgument, "duplicate parameter '" + name + "'");
  nodes_.push_back(Node{"parameter", {}, std::move(value), nullptr, true, name});
  params_[name] = nodes_.size() - 1;
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node node;
  node.op = std::move(op);
  for (const auto& v : inputs) {
    check(v);
    node.inputs.push_back(v.id);
    node.requires_grad = node.requires_grad || nodes_[v.id].requires_grad;
  }
  if (!value.all_finite()) fail(ErrorKind::Numeric, "non-finite value produced by '" + node.op + "'");
  node.value = std::move(value);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

const Tensor& Graph::value(Var v) const { return nodes_[check(v).id].value; }
const std::string& Graph::op(Var v) const { return nodes_[check(v).id].op; }

std::map<std::string, Tensor> Graph::backward(Var out) {
  const auto& shape = value(out).shape();
  if (shape_numel(shape) != 1)
    fail(ErrorKind::Shape, "backward without a seed needs a scalar output, '" + op(out) + "' has shape " +
                               shape_str(shape));
  return backward({{out, Tensor(shape, 1.0)}});
}

std::map<std::string, Tensor> Graph::backward(const std::vector<std::pair<Var, Tensor>>& seeds) {
  grads_.assign(nodes_.size(), std::nullopt);
  std::size_t last = 0;
  for (const auto& [v, seed] : seeds) {
    check(v);
    const Node& n = nodes_[v.id];
    if (seed.shape() != n.value.shape())
      fail(ErrorKind::Shape, "seed shape " + shape_str(seed.shape()) + " does not match node #" +
                                 std::to_string(v.id) + " '" + n.op + "' of shape " + shape_str(n.value.shape()));
    auto& slot = grads_[v.id];
    if (!slot) slot.emplace(n.value.shape());
    for (std::size_t i = 0; i < seed.size(); ++i) (*slot)[i] += seed[i];
    last = std::max(last, v.id);
  }
  for (std::size_t id = last + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || !grads_[id]) continue;
    BackwardContext ctx(*this, id, *grads_[id]);
    n.backward(ctx);
    for (auto in : n.inputs) {
      if (grads_[in] && grads_[in]->shape() != nodes_[in].value.shape())
        fail(ErrorKind::Shape, "gradient shape mismatch flowing out of node #" + std::to_string(id) + " '" +
                                   n.op + "'");
    }
  }
  std::map<std::string, Tensor> result;
  for (const auto& [name, id] : params_) result.emplace(name, grads_[id] ? *grads_[id] : Tensor(nodes_[id].value.shape()));
  return result;
}

Tensor Graph::grad(Var v) const {
  check(v);
  if (v.id < grads_.size() && grads_[v.id]) return *grads_[v.id];
  return Tensor(nodes_[v.id].value.shape());
}

void Graph::note_branch(std::uint64_t h) noexcept {
  // splitmix-style mixing keeps the signature order sensitive
  std::uint64_t z = branch_sig_ ^ (h + 0x9e3779b97f4a7c15ULL + (branch_sig_ << 6) + (branch_sig_ >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  branch_sig_ = z ^ (z >> 31);
}

std::map<std::string, Tensor> forward_backward(const GraphBuilder& build, const ParamSet& params) {
  Graph g;
  Var out = build(g, params);
  return g.backward(out);
}

namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

Evaluation evaluate(const GraphBuilder& build, const ParamSet& params) {
  Graph g;
  g.track_branches(true);
  Var out = build(g, params);
  if (out.value().size() != 1) fail(ErrorKind::Shape, "gradient check needs a scalar output");
  return {out.value()[0], g.branch_signature()};
}

}  // namespace

GradCheckReport check_gradients(const GraphBuilder& build, const ParamSet& params, double step, double tol,
                                std::size_t max_elements_per_param) {
  require(step > 0.0, "finite-difference step must be positive");
  GradCheckReport report;
  std::map<std::string, Tensor> analytic;
  std::uint64_t base_sig = 0;
  {
    Graph g;
    g.track_branches(true);
    Var out = build(g, params);
    if (out.value().size() != 1)
      fail(ErrorKind::Shape, "gradient check needs a scalar output, got " + shape_str(out.value().shape()));
    analytic = g.backward(out);
    base_sig = g.branch_signature();
  }

  ParamSet work = params;
  for (const auto& [name, tensor] : params) {
    ParamCheck pc;
    pc.name = name;
    const auto it = analytic.find(name);
    if (it == analytic.end()) fail(ErrorKind::InvalidArgument, "builder never registered parameter '" + name + "'");
    const Tensor& grad = it->second;
    std::size_t stride = 1;
    if (max_elements_per_param > 0 && tensor.size() > max_elements_per_param)
      stride = (tensor.size() + max_elements_per_param - 1) / max_elements_per_param;
    Tensor& slot = work.at(name);
    for (std::size_t i = 0; i < tensor.size(); i += stride) {
      const double orig = slot[i];
      slot[i] = orig + step;
      const Evaluation plus = evaluate(build, work);
      slot[i] = orig - step;
      const Evaluation minus = evaluate(build, work);
      slot[i] = orig;
      if (plus.signature != base_sig || minus.signature != base_sig) {
        ++pc.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * step);
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
      pc.max_rel_error = std::max(pc.max_rel_error, std::abs(a - numeric) / denom);
      ++pc.checked;
    }
    pc.passed = pc.max_rel_error < tol;
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.passed = report.passed && pc.passed;
    report.params.push_back(std::move(pc));
  }
  return report;
}

}  // namespace hst::ad
