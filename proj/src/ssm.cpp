#include "hst/ssm.hpp"

#include <cmath>
#include <memory>
#include <numeric>

#include "hst/ops.hpp"

namespace hst {

using namespace ad;

namespace {

// ZOH input gain f = (exp(x) - 1) / a with x = delta * a, given abar = exp(x).
inline double zoh_gain(double delta, double a, double x, double abar) {
  if (std::abs(x) < kZohTaylorThreshold) return delta * (1.0 + x * (0.5 + x * (1.0 / 6.0 + x / 24.0)));
  if (std::abs(x) < 0.5) return std::expm1(x) / a;
  return (abar - 1.0) / a;
}

// d f / d a
inline double zoh_gain_da(double delta, double a, double x, double abar, double f) {
  if (std::abs(x) < kZohTaylorThreshold) return delta * delta * (0.5 + x * (1.0 / 3.0 + x * (0.125 + x / 30.0)));
  return (delta * abar - f) / a;
}

std::vector<std::size_t> reversed_rows(std::size_t T) {
  std::vector<std::size_t> r(T);
  std::iota(r.rbegin(), r.rend(), 0);
  return r;
}

struct ScanCache {
  Buffer abar, gain, h;  // each (T, d, n)
};

}  // namespace

ZohStep discretize(double a, double b, double delta) {
  require(delta > 0.0, "discretize: delta must be positive");
  const double x = delta * a;
  require(a < 0.0 || std::abs(x) < kZohTaylorThreshold, "discretize: evolution coefficient must be negative");
  const double abar = std::exp(x);
  return {abar, zoh_gain(delta, a, x, abar) * b};
}

Var scan_recurrence(Var u, Var delta, Var a, Var B, Var C) {
  const Tensor& U = u.value();
  const Tensor& D = delta.value();
  const Tensor& A = a.value();
  const Tensor& Bm = B.value();
  const Tensor& Cm = C.value();
  if (U.ndim() != 2 || D.shape() != U.shape()) fail(ErrorKind::Shape, "scan: u and delta must both be (T, d)");
  const std::size_t T = U.dim(0), d = U.dim(1);
  if (A.ndim() != 2 || A.dim(0) != d) fail(ErrorKind::Shape, "scan: A must be (d, n)");
  const std::size_t n = A.dim(1);
  if (Bm.shape() != Shape{T, n} || Cm.shape() != Shape{T, n}) fail(ErrorKind::Shape, "scan: B and C must be (T, n)");
  for (double v : A.values())
    if (!(v < 0.0)) fail(ErrorKind::Numeric, "scan: evolution coefficients must be strictly negative");
  for (double v : D.values())
    if (!(v > 0.0)) fail(ErrorKind::Numeric, "scan: timescales must be positive");

  auto cache = std::make_shared<ScanCache>();
  const std::size_t dn = d * n;
  cache->abar.resize(T * dn);
  cache->gain.resize(T * dn);
  cache->h.resize(T * dn);
  Tensor Y({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    const double* bt = Bm.data() + t * n;
    const double* ct = Cm.data() + t * n;
    for (std::size_t c = 0; c < d; ++c) {
      const double dt = D[t * d + c];
      const double uc = U[t * d + c];
      const double* ac = A.data() + c * n;
      const std::size_t base = t * dn + c * n;
      const double* hprev = t ? cache->h.data() + base - dn : nullptr;
      double y = 0.0;
      for (std::size_t s = 0; s < n; ++s) {
        const double x = dt * ac[s];
        const double abar = std::exp(x);
        const double gain = zoh_gain(dt, ac[s], x, abar);
        const double h = (hprev ? abar * hprev[s] : 0.0) + gain * bt[s] * uc;
        cache->abar[base + s] = abar;
        cache->gain[base + s] = gain;
        cache->h[base + s] = h;
        y += ct[s] * h;
      }
      Y[t * d + c] = y;
    }
  }

  return u.graph->record("selective_scan", {u, delta, a, B, C}, std::move(Y), [cache, T, d, n](BackwardContext& ctx) {
    const Tensor& G = ctx.grad_out();
    const Tensor& U = ctx.in(0);
    const Tensor& D = ctx.in(1);
    const Tensor& A = ctx.in(2);
    const Tensor& Bm = ctx.in(3);
    const Tensor& Cm = ctx.in(4);
    const std::size_t dn = d * n;
    Tensor* dU = ctx.needs(0) ? &ctx.grad_in(0) : nullptr;
    Tensor* dD = ctx.needs(1) ? &ctx.grad_in(1) : nullptr;
    Tensor* dA = ctx.needs(2) ? &ctx.grad_in(2) : nullptr;
    Tensor* dB = ctx.needs(3) ? &ctx.grad_in(3) : nullptr;
    Tensor* dC = ctx.needs(4) ? &ctx.grad_in(4) : nullptr;
    std::vector<double> carry(dn, 0.0);  // dL/dh_t flowing back from step t+1
    for (std::size_t t = T; t-- > 0;) {
      const double* bt = Bm.data() + t * n;
      const double* ct = Cm.data() + t * n;
      for (std::size_t c = 0; c < d; ++c) {
        const double gy = G[t * d + c];
        const double dt = D[t * d + c];
        const double uc = U[t * d + c];
        const double* ac = A.data() + c * n;
        const std::size_t base = t * dn + c * n;
        const double* h = cache->h.data() + base;
        const double* hprev = t ? cache->h.data() + base - dn : nullptr;
        double* cr = carry.data() + c * n;
        double du = 0.0, ddelta = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
          if (dC) (*dC)[t * n + s] += gy * h[s];
          const double dh = gy * ct[s] + cr[s];
          const double abar = cache->abar[base + s];
          const double gain = cache->gain[base + s];
          const double d_abar = hprev ? dh * hprev[s] : 0.0;
          const double d_gain = dh * bt[s] * uc;
          if (dB) (*dB)[t * n + s] += dh * gain * uc;
          du += dh * gain * bt[s];
          // abar = exp(delta a): d/d delta = a abar, d/da = delta abar; d gain / d delta = abar
          ddelta += d_abar * ac[s] * abar + d_gain * abar;
          if (dA) {
            const double x = dt * ac[s];
            (*dA)[c * n + s] += d_abar * dt * abar + d_gain * zoh_gain_da(dt, ac[s], x, abar, gain);
          }
          cr[s] = dh * abar;
        }
        if (dU) (*dU)[t * d + c] += du;
        if (dD) (*dD)[t * d + c] += ddelta;
      }
    }
  });
}

Var selective_scan(Var z, const SsmParams& p, ScanDirection dir) {
  const Tensor& Z = z.value();
  if (Z.ndim() != 2) fail(ErrorKind::Shape, "selective_scan: expected (T, d) input, got " + shape_str(Z.shape()));
  const std::size_t T = Z.dim(0);
  Var zz = dir == ScanDirection::Backward ? gather_rows(z, reversed_rows(T)) : z;
  Var delta = softplus(add_row(matmul(zz, p.dt_weight), p.dt_bias));
  Var B = matmul(zz, p.B_proj);
  Var C = matmul(zz, p.C_proj);
  Var a = affine(exp(p.A_log), -1.0, 0.0);
  Var y = scan_recurrence(zz, delta, a, B, C);
  return dir == ScanDirection::Backward ? gather_rows(y, reversed_rows(T)) : y;
}

Var bimamba_forward(Var z, const BiMambaParams& p) {
  Var zn = layer_norm_rows(z, p.norm_gamma, p.norm_beta);
  Var y = add(selective_scan(zn, p.fwd, ScanDirection::Forward), selective_scan(zn, p.bwd, ScanDirection::Backward));
  return p.residual ? add(y, z) : y;
}

}  // namespace hst
