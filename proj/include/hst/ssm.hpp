#pragma once

#include <cstddef>
#include <vector>

#include "hst/autodiff.hpp"

namespace hst {

// Below this |delta * a| the ZOH input gain switches to its Taylor series.
inline constexpr double kZohTaylorThreshold = 1e-6;

struct ZohStep {
  double a_bar;
  double b_bar;
};

// a_bar = exp(delta a), b_bar = (exp(delta a) - 1) / a * b.
ZohStep discretize(double a, double b, double delta);

// Graph handles for one selective SSM direction over d channels with n states.
struct SsmParams {
  ad::Var A_log;      // (d, n); A = -exp(A_log)
  ad::Var B_proj;     // (d, n); B_t = z_t B_proj
  ad::Var C_proj;     // (d, n); C_t = z_t C_proj
  ad::Var dt_weight;  // (d, d)
  ad::Var dt_bias;    // (d); delta_t = softplus(z_t dt_weight + dt_bias)
};

enum class ScanDirection { Forward, Backward };

// Fused diagonal recurrence
//   h_t[c,s] = exp(delta[t,c] a[c,s]) h_{t-1}[c,s] + f(delta[t,c], a[c,s]) B[t,s] u[t,c]
//   y[t,c]   = sum_s C[t,s] h_t[c,s],  h_0 = 0
// with f the ZOH gain. u, delta: (T, d); a: (d, n), strictly negative; B, C: (T, n).
ad::Var scan_recurrence(ad::Var u, ad::Var delta, ad::Var a, ad::Var B, ad::Var C);

// Input-selective scan of z (T, d). The backward direction scans the reversed
// sequence and re-reverses the output. Memory and time are linear in T.
ad::Var selective_scan(ad::Var z, const SsmParams& params, ScanDirection dir);

struct BiMambaParams {
  ad::Var norm_gamma;  // (d)
  ad::Var norm_beta;   // (d)
  SsmParams fwd;
  SsmParams bwd;
  bool residual = true;
};

// LayerNorm(z) feeds both directions; Y_bi = forward + backward (+ z).
ad::Var bimamba_forward(ad::Var z, const BiMambaParams& params);

}  // namespace hst
