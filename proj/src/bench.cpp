#include "hst/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Core>

#include "hst/init.hpp"
#include "hst/model.hpp"
#include "hst/ops.hpp"
#include "hst/ssm.hpp"

namespace hst {

using namespace ad;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using MapM = Eigen::Map<RowMat>;

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

template <typename F>
double timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

AttentionBaseline AttentionBaseline::init(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  AttentionBaseline a;
  a.Wq = uniform_fan_in({d, d}, d, rng);
  a.Wk = uniform_fan_in({d, d}, d, rng);
  a.Wv = uniform_fan_in({d, d}, d, rng);
  return a;
}

Tensor attention_baseline_forward(const Tensor& z, const AttentionBaseline& attn) {
  if (z.ndim() != 2 || attn.Wq.ndim() != 2 || attn.Wq.dim(0) != z.dim(1))
    fail(ErrorKind::Shape, "attention baseline: expected (T, d) input matching the projections");
  const std::size_t T = z.dim(0), d = z.dim(1);
  const std::size_t dv = attn.Wv.dim(1);
  MapC Z(z.data(), T, d);
  Tensor q({T, attn.Wq.dim(1)}), k({T, attn.Wk.dim(1)}), v({T, dv});
  MapM(q.data(), T, q.dim(1)).noalias() = Z * MapC(attn.Wq.data(), d, q.dim(1));
  MapM(k.data(), T, k.dim(1)).noalias() = Z * MapC(attn.Wk.data(), d, k.dim(1));
  MapM(v.data(), T, dv).noalias() = Z * MapC(attn.Wv.data(), d, dv);
  Tensor s({T, T});
  MapM S(s.data(), T, T);
  S.noalias() = MapC(q.data(), T, q.dim(1)) * MapC(k.data(), T, k.dim(1)).transpose();
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.dim(1)));
  for (std::size_t r = 0; r < T; ++r) {
    double* row = s.data() + r * T;
    double mx = -INFINITY;
    for (std::size_t c = 0; c < T; ++c) mx = std::max(mx, row[c] * scale);
    double sum = 0.0;
    for (std::size_t c = 0; c < T; ++c) sum += (row[c] = std::exp(row[c] * scale - mx));
    for (std::size_t c = 0; c < T; ++c) row[c] /= sum;
  }
  Tensor out({T, dv});
  MapM(out.data(), T, dv).noalias() = S * MapC(v.data(), T, dv);
  return out;
}

double attention_flops(std::size_t T, std::size_t d) {
  const double t = static_cast<double>(T), dd = static_cast<double>(d);
  return 3.0 * 2.0 * t * dd * dd  // projections
         + 2.0 * t * t * dd       // scores
         + 5.0 * t * t            // scale, max, exp, sum, divide
         + 2.0 * t * t * dd;      // weighted values
}

double bimamba_flops(std::size_t T, std::size_t d, std::size_t n) {
  const double t = static_cast<double>(T), dd = static_cast<double>(d), nn = static_cast<double>(n);
  const double norm = 8.0 * t * dd;
  const double per_dir = 2.0 * t * dd * dd    // delta generator
                         + 5.0 * t * dd        // bias + softplus
                         + 2.0 * 2.0 * t * dd * nn  // B and C generators
                         + 12.0 * t * dd * nn;      // exp, gain, state update, readout
  return norm + 2.0 * per_dir + 2.0 * t * dd;
}

double fit_loglog_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) fail(ErrorKind::InvalidArgument, "fit_loglog_slope: xs and ys differ in length");
  if (xs.size() < 2) fail(ErrorKind::InvalidArgument, "fit_loglog_slope: need at least two points");
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) fail(ErrorKind::InvalidArgument, "fit_loglog_slope: values must be positive");
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  const double n = static_cast<double>(lx.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / n;
    my += ly[i] / n;
  }
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  if (sxx == 0.0) fail(ErrorKind::InvalidArgument, "fit_loglog_slope: xs must not all be equal");
  return sxy / sxx;
}

BenchResult run_scaling(const BenchConfig& cfg) {
  const auto& L = cfg.lengths;
  if (L.size() < 3) fail(ErrorKind::InvalidArgument, "bench: need at least 3 lengths");
  for (std::size_t i = 1; i < L.size(); ++i)
    require(L[i] > L[i - 1], "bench: lengths must be strictly increasing");
  require(L.front() >= 1 && L.back() >= 8 * L.front(), "bench: lengths must span at least 8x");
  require(cfg.repeats >= 5, "bench: need at least 5 repeats");

  ModelConfig mc;
  mc.d_out = cfg.d_out;
  mc.n = cfg.n;
  mc.seed = cfg.seed;
  const ParamSet params = init_params(mc);
  const AttentionBaseline attn = AttentionBaseline::init(cfg.d_out, cfg.seed + 1);

  auto run_bimamba = [&](const Tensor& z) {
    Graph g;
    auto P = [&](const std::string& name) { return g.constant(params.at(name)); };
    auto dir = [&](const std::string& q) {
      return SsmParams{P(q + "A_log"), P(q + "B_proj"), P(q + "C_proj"), P(q + "dt.weight"), P(q + "dt.bias")};
    };
    BiMambaParams bp{P("temporal.0.norm.gamma"), P("temporal.0.norm.beta"), dir("temporal.0.fwd."),
                     dir("temporal.0.bwd."), true};
    return bimamba_forward(g.constant(z), bp).value()[0];
  };
  auto run_attention = [&](const Tensor& z) { return attention_baseline_forward(z, attn)[0]; };

  BenchResult res;
  res.lengths = L;
  res.methods = {{"bimamba", {}, {}, {}, 0.0, 0.0}, {"attention", {}, {}, {}, 0.0, 0.0}};
  volatile double sink = 0.0;
  for (std::size_t T : L) {
    std::mt19937_64 rng(cfg.seed ^ T);
    std::normal_distribution<double> nd(0.0, 1.0);
    Tensor z({T, cfg.d_out});
    for (auto& v : z.values()) v = nd(rng);
    for (std::size_t m = 0; m < 2; ++m) {
      auto body = [&] { sink = sink + (m == 0 ? run_bimamba(z) : run_attention(z)); };
      const std::size_t base = AllocationCounter::live();
      AllocationCounter::reset_peak();
      body();  // warm-up, also measures the allocation peak
      const double peak = static_cast<double>(AllocationCounter::peak() - base);
      std::vector<double> times;
      for (std::size_t r = 0; r < cfg.repeats; ++r) times.push_back(timed(body));
      auto& mt = res.methods[m];
      mt.seconds.push_back(median(times));
      mt.peak_bytes.push_back(peak);
      mt.flops.push_back(m == 0 ? bimamba_flops(T, cfg.d_out, cfg.n) : attention_flops(T, cfg.d_out));
    }
  }
  std::vector<double> xs(L.begin(), L.end());
  for (auto& mt : res.methods) {
    mt.slope = fit_loglog_slope(xs, mt.seconds);
    mt.memory_slope = fit_loglog_slope(xs, mt.peak_bytes);
  }
  return res;
}

std::string bench_csv(const BenchResult& r) {
  std::ostringstream os;
  os.precision(9);
  os << "method,T,median_seconds,peak_bytes,analytic_flops\n";
  for (const auto& m : r.methods)
    for (std::size_t i = 0; i < r.lengths.size(); ++i)
      os << m.method << ',' << r.lengths[i] << ',' << m.seconds[i] << ',' << static_cast<long long>(m.peak_bytes[i])
         << ',' << static_cast<long long>(m.flops[i]) << '\n';
  return os.str();
}

}  // namespace hst
