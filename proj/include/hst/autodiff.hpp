#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hst/tensor.hpp"

namespace hst::ad {

class Graph;

// Handle to one recorded node. Cheap to copy; only valid while its Graph lives.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Passed to a node's backward function.
class BackwardContext {
 public:
  const Tensor& grad_out() const { return *grad_out_; }
  const Tensor& out() const;
  const Tensor& in(std::size_t k) const;
  // Whether input k leads to any parameter; skip its gradient when false.
  bool needs(std::size_t k) const;
  // Accumulator for input k, zero-initialized on first use.
  Tensor& grad_in(std::size_t k);

 private:
  friend class Graph;
  BackwardContext(Graph& g, std::size_t node, const Tensor& grad_out)
      : graph_(&g), node_(node), grad_out_(&grad_out) {}
  Graph* graph_;
  std::size_t node_;
  const Tensor* grad_out_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

// Tape of recorded operations. Recording order is a topological order, so the
// reverse sweep simply walks the node list backwards. Single writer.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf that receives a gradient under `name`. Names must be unique per graph.
  Var parameter(const std::string& name, Tensor value);

  Var record(std::string op, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(Var v) const;
  const std::string& op(Var v) const;
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse sweep seeded at one or more outputs (seeds are summed if an output
  // repeats). Returns gradients for every registered parameter; parameters the
  // outputs do not depend on get zeros.
  std::map<std::string, Tensor> backward(const std::vector<std::pair<Var, Tensor>>& seeds);
  std::map<std::string, Tensor> backward(Var out, const Tensor& seed) { return backward({{out, seed}}); }
  // Scalar output with seed 1.
  std::map<std::string, Tensor> backward(Var out);

  // Gradient accumulated at an arbitrary node by the last backward call.
  Tensor grad(Var v) const;

  // Piecewise ops (max, ReLU-like) mix the branch they took into this hash.
  // Finite-difference checks compare it across perturbations to detect kinks.
  // Ops may skip computing the hash unless tracking is on.
  void note_branch(std::uint64_t h) noexcept;
  void track_branches(bool on) noexcept { track_branches_ = on; }
  bool tracks_branches() const noexcept { return track_branches_; }
  std::uint64_t branch_signature() const noexcept { return branch_sig_; }

 private:
  friend class BackwardContext;
  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    std::optional<std::string> param_name;
  };

  Var check(Var v) const;

  std::vector<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::map<std::string, std::size_t> params_;
  std::uint64_t branch_sig_ = 0x9e3779b97f4a7c15ULL;
  bool track_branches_ = false;
};

// Named parameter tensors in a stable (sorted) order.
using ParamSet = std::map<std::string, Tensor>;

// Build the graph from `params`, returning the node to differentiate.
using GraphBuilder = std::function<Var(Graph&, const ParamSet&)>;

// One forward + reverse sweep from a builder, scalar output seeded with 1.
std::map<std::string, Tensor> forward_backward(const GraphBuilder& build, const ParamSet& params);

struct ParamCheck {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Elements whose perturbation crossed a kink (tie in max, LeakyReLU at 0).
  std::size_t excluded = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0.0;
  bool passed = true;
};

// Central differences (f(x+h) - f(x-h)) / 2h against the reverse sweep, for every
// element of every parameter. Relative error is |a - n| / max(|a|, |n|, 1e-5).
// `max_elements_per_param` > 0 checks an evenly strided subset of large tensors.
GradCheckReport check_gradients(const GraphBuilder& build, const ParamSet& params, double step, double tol,
                                std::size_t max_elements_per_param = 0);

}  // namespace hst::ad
