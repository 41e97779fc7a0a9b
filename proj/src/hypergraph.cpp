#include "hst/hypergraph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

#include "hst/ops.hpp"

namespace hst {

using namespace ad;

RegionMap RegionMap::dlib68() {
  RegionMap m;
  for (std::size_t i = 36; i <= 41; ++i) m.regions[0].push_back(i);
  for (std::size_t i = 42; i <= 47; ++i) m.regions[1].push_back(i);
  for (std::size_t i = 48; i <= 67; ++i) m.regions[2].push_back(i);
  return m;
}

void Incidence::add_edge(std::vector<std::size_t> members) {
  require(num_nodes_ <= 256, "incidence: at most 256 nodes");
  require(!members.empty(), "incidence: empty hyperedge");
  std::sort(members.begin(), members.end());
  for (std::size_t i = 0; i < members.size(); ++i) {
    require(members[i] < num_nodes_, "incidence: node index out of range");
    require(i == 0 || members[i] != members[i - 1], "incidence: duplicate node in hyperedge");
  }
  for (auto m : members) members_.push_back(static_cast<std::uint8_t>(m));
  offsets_.push_back(static_cast<std::uint16_t>(members_.size()));
}

void Incidence::append(const Incidence& other) {
  require(other.num_nodes_ == num_nodes_, "incidence: node counts differ");
  for (std::size_t e = 0; e < other.num_edges(); ++e) {
    auto m = other.edge(e);
    add_edge(std::vector<std::size_t>(m.begin(), m.end()));
  }
}

Tensor Incidence::dense() const {
  Tensor h({num_nodes_, num_edges()});
  for (std::size_t e = 0; e < num_edges(); ++e)
    for (auto v : edge(e)) h.at(v, e) = 1.0;
  return h;
}

std::vector<std::size_t> Incidence::column_sums() const {
  std::vector<std::size_t> s;
  for (std::size_t e = 0; e < num_edges(); ++e) s.push_back(edge(e).size());
  return s;
}

std::vector<std::size_t> Incidence::node_degrees() const {
  std::vector<std::size_t> d(num_nodes_, 0);
  for (auto v : members_) ++d[v];
  return d;
}

Incidence build_knn_hyperedges(const Points& aligned, int k) {
  const auto n = static_cast<std::size_t>(aligned.rows());
  if (n != kNumLandmarks) fail(ErrorKind::Shape, "build_knn_hyperedges: expected 68 landmarks");
  require(k >= 1 && k <= kNumLandmarks - 1, "build_knn_hyperedges: k must be in [1, 67]");
  Incidence inc(kNumNodes);
  std::vector<std::pair<double, std::size_t>> dist(n - 1);
  for (std::size_t j = 0; j < n; ++j) {
    std::size_t m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i == j) continue;
      dist[m++] = {(aligned.row(static_cast<Eigen::Index>(i)) - aligned.row(static_cast<Eigen::Index>(j))).squaredNorm(), i};
    }
    // pair ordering breaks distance ties by the smaller index
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    std::vector<std::size_t> members{j};
    for (int q = 0; q < k; ++q) members.push_back(dist[static_cast<std::size_t>(q)].second);
    inc.add_edge(std::move(members));
  }
  return inc;
}

Incidence build_region_hyperedges(const RegionMap& regions) {
  Incidence inc(kNumNodes);
  std::vector<bool> used(kNumLandmarks, false);
  for (std::size_t e = 0; e < regions.regions.size(); ++e) {
    std::vector<std::size_t> members;
    for (auto v : regions.regions[e]) {
      require(v < kNumLandmarks && !used[v], "region map: indices must be disjoint geometry nodes");
      used[v] = true;
      members.push_back(v);
    }
    members.push_back(kNumLandmarks + e);
    inc.add_edge(std::move(members));
  }
  return inc;
}

Incidence assemble_incidence(const Incidence& geo, const Incidence& tex) {
  Incidence h = geo;
  h.append(tex);
  return h;
}

Incidence build_topology(const Points& aligned, int k, const RegionMap& regions) {
  return assemble_incidence(build_knn_hyperedges(aligned, k), build_region_hyperedges(regions));
}

namespace {

struct FrameCache {
  std::vector<double> s;  // D^-1/2 per node
  std::vector<double> G;  // per edge, H^T S U
  std::vector<double> M;  // per node, H W G
};

}  // namespace

Var hypergraph_propagate(Var u, Var w, const std::vector<const Incidence*>& frames, const std::vector<std::size_t>& rows) {
  const Tensor& U = u.value();
  const Tensor& Wt = w.value();
  const std::size_t c = U.cols();
  require(!frames.empty(), "hypergraph_propagate: no frames");
  const std::size_t n = frames.front()->num_nodes();
  const std::size_t E = frames.front()->num_edges();
  if (Wt.size() != E) fail(ErrorKind::Shape, "hypergraph_propagate: edge weight count does not match hyperedges");
  if (rows.size() != frames.size() * n) fail(ErrorKind::Shape, "hypergraph_propagate: row map size");
  for (auto r : rows)
    if (r >= U.size() / c) fail(ErrorKind::Shape, "hypergraph_propagate: row index out of range");

  auto caches = std::make_shared<std::vector<FrameCache>>(frames.size());
  Tensor out(U.shape());
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const Incidence& inc = *frames[f];
    if (inc.num_nodes() != n || inc.num_edges() != E)
      fail(ErrorKind::Shape, "hypergraph_propagate: frames must share node and edge counts");
    FrameCache& fc = (*caches)[f];
    const std::size_t* rf = rows.data() + f * n;
    std::vector<double> deg(n, 0.0);
    for (std::size_t e = 0; e < E; ++e)
      for (auto v : inc.edge(e)) deg[v] += Wt[e] * static_cast<double>(inc.edge(e).size());
    fc.s.resize(n);
    for (std::size_t v = 0; v < n; ++v) {
      if (!(deg[v] > 0.0))
        fail(ErrorKind::Numeric, "isolated node " + std::to_string(v) + " (weighted degree " + std::to_string(deg[v]) + ")");
      fc.s[v] = 1.0 / std::sqrt(deg[v]);
    }
    fc.G.assign(E * c, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
      double* ge = fc.G.data() + e * c;
      for (auto j : inc.edge(e)) {
        const double* uj = U.data() + rf[j] * c;
        const double sj = fc.s[j];
        for (std::size_t k = 0; k < c; ++k) ge[k] += sj * uj[k];
      }
    }
    fc.M.assign(n * c, 0.0);
    for (std::size_t e = 0; e < E; ++e) {
      const double* ge = fc.G.data() + e * c;
      for (auto v : inc.edge(e)) {
        double* mv = fc.M.data() + v * c;
        for (std::size_t k = 0; k < c; ++k) mv[k] += Wt[e] * ge[k];
      }
    }
    for (std::size_t v = 0; v < n; ++v) {
      double* ov = out.data() + rf[v] * c;
      const double* mv = fc.M.data() + v * c;
      for (std::size_t k = 0; k < c; ++k) ov[k] = fc.s[v] * mv[k];
    }
  }

  std::vector<const Incidence*> frame_list = frames;
  return u.graph->record(
      "hypergraph_propagate", {u, w}, std::move(out),
      [caches, frame_list, rows, n, E, c](BackwardContext& ctx) {
        const Tensor& dO = ctx.grad_out();
        const Tensor& U = ctx.in(0);
        const Tensor& Wt = ctx.in(1);
        std::vector<double> P(E * c), R(n * c), ddeg(n);
        for (std::size_t f = 0; f < frame_list.size(); ++f) {
          const Incidence& inc = *frame_list[f];
          const FrameCache& fc = (*caches)[f];
          const std::size_t* rf = rows.data() + f * n;
          // P_e = sum_{i in e} s_i dO_i
          std::fill(P.begin(), P.end(), 0.0);
          for (std::size_t e = 0; e < E; ++e) {
            double* pe = P.data() + e * c;
            for (auto i : inc.edge(e)) {
              const double* gi = dO.data() + rf[i] * c;
              const double si = fc.s[i];
              for (std::size_t k = 0; k < c; ++k) pe[k] += si * gi[k];
            }
          }
          // R_j = sum_{e ni j} w_e P_e
          std::fill(R.begin(), R.end(), 0.0);
          for (std::size_t e = 0; e < E; ++e) {
            const double* pe = P.data() + e * c;
            for (auto j : inc.edge(e)) {
              double* rj = R.data() + j * c;
              for (std::size_t k = 0; k < c; ++k) rj[k] += Wt[e] * pe[k];
            }
          }
          if (ctx.needs(0)) {
            Tensor& dU = ctx.grad_in(0);
            for (std::size_t j = 0; j < n; ++j) {
              double* du = dU.data() + rf[j] * c;
              const double* rj = R.data() + j * c;
              for (std::size_t k = 0; k < c; ++k) du[k] += fc.s[j] * rj[k];
            }
          }
          if (!ctx.needs(1)) continue;
          Tensor& dw = ctx.grad_in(1);
          for (std::size_t v = 0; v < n; ++v) {
            const double* gv = dO.data() + rf[v] * c;
            const double* mv = fc.M.data() + v * c;
            const double* uv = U.data() + rf[v] * c;
            const double* rv = R.data() + v * c;
            double ds = 0.0;
            for (std::size_t k = 0; k < c; ++k) ds += gv[k] * mv[k] + uv[k] * rv[k];
            ddeg[v] = -0.5 * ds * fc.s[v] * fc.s[v] * fc.s[v];
          }
          for (std::size_t e = 0; e < E; ++e) {
            const double* pe = P.data() + e * c;
            const double* ge = fc.G.data() + e * c;
            double direct = 0.0;
            for (std::size_t k = 0; k < c; ++k) direct += pe[k] * ge[k];
            double via_degree = 0.0;
            for (auto i : inc.edge(e)) via_degree += ddeg[i];
            dw[e] += direct + static_cast<double>(inc.edge(e).size()) * via_degree;
          }
        }
      });
}

Var hyperconv_forward(Var x, const Incidence& topo, Var edge_weights, Var theta) {
  if (x.value().ndim() != 2 || x.value().dim(0) != topo.num_nodes())
    fail(ErrorKind::Shape, "hyperconv_forward: features must have one row per node");
  std::vector<std::size_t> rows(topo.num_nodes());
  std::iota(rows.begin(), rows.end(), 0);
  return leaky_relu(hypergraph_propagate(matmul(x, theta), edge_weights, {&topo}, rows));
}

}  // namespace hst
