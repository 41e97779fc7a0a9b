#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/autodiff.hpp"

namespace hst {

inline constexpr std::size_t kNumNodes = kNumLandmarks + 3;  // 68 geometry + 3 texture super-nodes
inline constexpr std::size_t kNumHyperedges = kNumLandmarks + 3;

// Dlib-68 landmark groups (0-based) feeding each texture super-node.
struct RegionMap {
  std::array<std::vector<std::size_t>, 3> regions;  // left eye, right eye, mouth

  static RegionMap dlib68();
};

// Sparse binary incidence in compressed-column form: hyperedge e holds nodes
// members[offsets[e] .. offsets[e+1]) in ascending order.
class Incidence {
 public:
  Incidence() = default;
  explicit Incidence(std::size_t num_nodes) : num_nodes_(num_nodes) {}

  // Appends a hyperedge; members are sorted and must be distinct, in-range nodes.
  void add_edge(std::vector<std::size_t> members);
  void append(const Incidence& other);

  std::size_t num_nodes() const noexcept { return num_nodes_; }
  std::size_t num_edges() const noexcept { return offsets_.size() - 1; }
  std::span<const std::uint8_t> edge(std::size_t e) const {
    return {members_.data() + offsets_[e], static_cast<std::size_t>(offsets_[e + 1] - offsets_[e])};
  }

  Tensor dense() const;  // (num_nodes, num_edges) 0/1 matrix
  std::vector<std::size_t> column_sums() const;
  std::vector<std::size_t> node_degrees() const;  // unweighted membership counts

 private:
  std::size_t num_nodes_ = 0;
  std::vector<std::uint16_t> offsets_{0};
  std::vector<std::uint8_t> members_;
};

// One hyperedge per geometry node: the node plus its k nearest geometry nodes
// (Euclidean, ties by smaller index). 71 rows, super-node rows empty.
Incidence build_knn_hyperedges(const Points& aligned, int k);
// One star hyperedge per region: the region's landmarks plus its super-node.
Incidence build_region_hyperedges(const RegionMap& regions);
// H = [H_geo || H_tex]
Incidence assemble_incidence(const Incidence& geo, const Incidence& tex);
Incidence build_topology(const Points& aligned, int k, const RegionMap& regions = RegionMap::dlib68());

// D^-1/2 H diag(w) H^T D^-1/2 U for a batch of frames sharing the edge weights.
// Node v of frame f lives at row rows[f * num_nodes + v] of `u`; the output
// uses the same layout. Differentiable in `u` and `w`; the incidences must
// outlive the backward pass. Throws "isolated node"
// when any weighted degree is not strictly positive.
ad::Var hypergraph_propagate(ad::Var u, ad::Var w, const std::vector<const Incidence*>& frames,
                             const std::vector<std::size_t>& rows);

// LeakyReLU(D^-1/2 H W H^T D^-1/2 X Theta) for a single frame.
ad::Var hyperconv_forward(ad::Var x, const Incidence& topo, ad::Var edge_weights, ad::Var theta);

}  // namespace hst
