#pragma once

#include <cstddef>
#include <vector>

#include "hst/autodiff.hpp"

namespace hst::ad {

inline constexpr double kLeakySlope = 0.01;

// --- linear algebra / elementwise ---------------------------------------
Var matmul(Var a, Var b);            // (m,k) x (k,n)
Var add(Var a, Var b);               // same shape
Var sub(Var a, Var b);
Var mul(Var a, Var b);               // elementwise
Var add_row(Var a, Var bias);        // (m,n) + (n) broadcast over rows
Var affine(Var a, double scale, double shift);  // scale * a + shift
Var pow_scalar(Var a, double p);     // a^p, a >= 0 when p is not an integer

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var silu(Var a);
Var softplus(Var a);
Var leaky_relu(Var a, double slope = kLeakySlope);

// --- row-wise normalizers -------------------------------------------------
Var softmax_rows(Var a);             // max-subtracted
Var log_softmax_rows(Var a);
Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);

// --- reductions ---------------------------------------------------------------
// Column-wise max over rows: (m,n) -> (n). Ties route to the first row.
Var max_over_rows(Var a);
std::vector<std::size_t> argmax_over_rows(const Tensor& a);
Var mean_over_rows(Var a);           // (m,n) -> (n)
Var sum_all(Var a);                  // -> (1)
Var mean_all(Var a);                 // -> (1)

// --- indexing ---------------------------------------------------------------
Var reshape(Var a, Shape shape);
Var gather_rows(Var a, std::vector<std::size_t> rows);             // (m,n) -> (k,n)
// Places row i of `a` at row rows[i] of a zero (out_rows, n) matrix; rows unique.
Var scatter_rows(Var a, std::vector<std::size_t> rows, std::size_t out_rows);
Var concat_rows(const std::vector<Var>& parts);
Var gather_elements(Var a, std::vector<std::size_t> flat_indices); // -> (k)

// Per-segment weighted sum: weights (F,K), values (F*K, D) -> (F, D) with
// out[f] = sum_k weights[f,k] * values[f*K + k].
Var weighted_row_sum(Var weights, Var values);

// --- convolution (NCHW) -------------------------------------------------------
// 3x3, stride 1, zero padding 1. x (N,C,H,W), w (O,C,3,3), b (O) -> (N,O,H,W).
Var conv3x3(Var x, Var w, Var b);
Var max_pool2x2(Var x);              // (N,C,H,W) -> (N,C,H/2,W/2), H and W even
Var global_avg_pool(Var x);          // (N,C,H,W) -> (N,C)

}  // namespace hst::ad
