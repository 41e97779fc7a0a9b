#include "hst/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace hst::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MatMap(t.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void expect(bool ok, const char* op, std::string_view detail) {
  if (!ok) fail(ErrorKind::Shape, std::string(op) + ": " + std::string(detail));
}

void expect_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) expect(false, op, "expected a matrix, got " + shape_str(t.shape()));
}

void expect_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) expect(false, op, shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Elementwise map whose derivative is expressed through (x, y).
template <typename F, typename D>
Var unary(const char* name, Var a, F f, D dfdx) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return a.graph->record(name, {a}, std::move(y), [dfdx](BackwardContext& ctx) {
    const Tensor& x = ctx.in(0);
    const Tensor& y = ctx.out();
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] += g[i] * dfdx(x[i], y[i]);
  });
}

double softplus_value(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  expect_matrix(A, "matmul");
  expect_matrix(B, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) expect(false, "matmul", "inner dimensions " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  Tensor C({m, n});
  as_mat(C, m, n).noalias() = as_mat(A, m, k) * as_mat(B, k, n);
  return a.graph->record("matmul", {a, b}, std::move(C), [m, k, n](BackwardContext& ctx) {
    auto G = as_mat(ctx.grad_out(), m, n);
    if (ctx.needs(0)) as_mat(ctx.grad_in(0), m, k).noalias() += G * as_mat(ctx.in(1), k, n).transpose();
    if (ctx.needs(1)) as_mat(ctx.grad_in(1), k, n).noalias() += as_mat(ctx.in(0), m, k).transpose() * G;
  });
}

Var add(Var a, Var b) {
  expect_same(a.value(), b.value(), "add");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return a.graph->record("add", {a, b}, std::move(y), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.needs(k)) continue;
      Tensor& gi = ctx.grad_in(k);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  expect_same(a.value(), b.value(), "sub");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  return a.graph->record("sub", {a, b}, std::move(y), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(0)) {
      Tensor& ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  expect_same(a.value(), b.value(), "mul");
  Tensor y = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return a.graph->record("mul", {a, b}, std::move(y), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& av = ctx.in(0);
    const Tensor& bv = ctx.in(1);
    if (ctx.needs(0)) {
      Tensor& ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.grad_in(1);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var add_row(Var a, Var bias) {
  const Tensor& A = a.value();
  const Tensor& b = bias.value();
  const std::size_t n = A.cols();
  if (b.size() != n) expect(false, "add_row", "bias " + shape_str(b.shape()) + " vs matrix " + shape_str(A.shape()));
  const std::size_t m = A.size() / n;
  Tensor y = A;
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] += b[c];
  return a.graph->record("add_row", {a, bias}, std::move(y), [m, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    if (ctx.needs(0)) {
      Tensor& ga = ctx.grad_in(0);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (ctx.needs(1)) {
      Tensor& gb = ctx.grad_in(1);
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
    }
  });
}

Var affine(Var a, double scale, double shift) {
  return unary("affine", a, [=](double x) { return scale * x + shift; }, [=](double, double) { return scale; });
}

Var pow_scalar(Var a, double p) {
  return unary(
      "pow", a, [p](double x) { return std::pow(x, p); },
      [p](double x, double) { return p == 0.0 ? 0.0 : p * std::pow(x, p - 1.0); });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double v : a.value().values())
    if (v <= 0.0) fail(ErrorKind::Numeric, "log: non-positive input");
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var silu(Var a) {
  return unary(
      "silu", a, [](double x) { return x * sigmoid_value(x); },
      [](double x, double) {
        const double s = sigmoid_value(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

Var softplus(Var a) {
  return unary("softplus", a, softplus_value, [](double x, double) { return sigmoid_value(x); });
}

Var leaky_relu(Var a, double slope) {
  if (a.graph->tracks_branches()) {
    std::uint64_t h = 0;
    for (double v : a.value().values()) h = h * 31 + (v > 0.0 ? 1 : 0);
    a.graph->note_branch(h);
  }
  return unary(
      "leaky_relu", a, [slope](double x) { return x > 0.0 ? x : slope * x; },
      [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var softmax_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), m = x.size() / n;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = y.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < n; ++c) yr[c] /= s;
  }
  return a.graph->record("softmax_rows", {a}, std::move(y), [m, n](BackwardContext& ctx) {
    const Tensor& y = ctx.out();
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < m; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Var log_softmax_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), m = x.size() / n;
  Tensor y(x.shape());
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = x.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += std::exp(xr[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < n; ++c) y[r * n + c] = xr[c] - lse;
  }
  return a.graph->record("log_softmax_rows", {a}, std::move(y), [m, n](BackwardContext& ctx) {
    const Tensor& y = ctx.out();
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < m; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < n; ++c) gs += g[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[r * n + c] - std::exp(y[r * n + c]) * gs;
    }
  });
}

Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Tensor& X = x.value();
  const std::size_t n = X.cols(), m = X.size() / n;
  expect(gamma.value().size() == n && beta.value().size() == n, "layer_norm_rows", "scale/shift width");
  const Tensor& G = gamma.value();
  const Tensor& B = beta.value();
  Tensor y(X.shape());
  // normalized values and inverse std are kept for the backward pass
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto inv_std = std::make_shared<std::vector<double>>(m);
  for (std::size_t r = 0; r < m; ++r) {
    const double* xr = X.data() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xr[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xr[c] - mean) * is;
      (*xhat)[r * n + c] = h;
      y[r * n + c] = h * G[c] + B[c];
    }
  }
  return x.graph->record("layer_norm_rows", {x, gamma, beta}, std::move(y), [m, n, xhat, inv_std](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& G = ctx.in(1);
    if (ctx.needs(1) || ctx.needs(2)) {
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) {
          if (ctx.needs(1)) ctx.grad_in(1)[c] += g[r * n + c] * (*xhat)[r * n + c];
          if (ctx.needs(2)) ctx.grad_in(2)[c] += g[r * n + c];
        }
    }
    if (!ctx.needs(0)) return;
    Tensor& gx = ctx.grad_in(0);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < m; ++r) {
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t c = 0; c < n; ++c) {
        const double gh = g[r * n + c] * G[c];
        s1 += gh;
        s2 += gh * (*xhat)[r * n + c];
      }
      for (std::size_t c = 0; c < n; ++c) {
        const double gh = g[r * n + c] * G[c];
        gx[r * n + c] += (*inv_std)[r] * (gh - inv_n * s1 - (*xhat)[r * n + c] * inv_n * s2);
      }
    }
  });
}

std::vector<std::size_t> argmax_over_rows(const Tensor& a) {
  const std::size_t n = a.cols(), m = a.size() / n;
  std::vector<std::size_t> idx(n, 0);
  for (std::size_t c = 0; c < n; ++c)
    for (std::size_t r = 1; r < m; ++r)
      if (a[r * n + c] > a[idx[c] * n + c]) idx[c] = r;
  return idx;
}

Var max_over_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  auto idx = argmax_over_rows(x);
  Tensor y({n});
  std::uint64_t h = 0;
  for (std::size_t c = 0; c < n; ++c) {
    y[c] = x[idx[c] * n + c];
    h = h * 1000003 + idx[c];
  }
  a.graph->note_branch(h);
  return a.graph->record("max_over_rows", {a}, std::move(y), [idx, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t c = 0; c < n; ++c) gx[idx[c] * n + c] += g[c];
  });
}

Var mean_over_rows(Var a) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), m = x.size() / n;
  Tensor y({n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) y[c] += x[r * n + c];
  for (std::size_t c = 0; c < n; ++c) y[c] /= static_cast<double>(m);
  return a.graph->record("mean_over_rows", {a}, std::move(y), [m, n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += g[c] / static_cast<double>(m);
  });
}

Var sum_all(Var a) {
  const Tensor& x = a.value();
  const double s = std::accumulate(x.values().begin(), x.values().end(), 0.0);
  return a.graph->record("sum_all", {a}, Tensor::scalar(s), [](BackwardContext& ctx) {
    const double g = ctx.grad_out()[0];
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
}

Var mean_all(Var a) { return affine(sum_all(a), 1.0 / static_cast<double>(a.value().size()), 0.0); }

Var reshape(Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return a.graph->record("reshape", {a}, std::move(y), [](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols(), m = x.size() / n;
  expect(!rows.empty(), "gather_rows", "empty index list");
  Tensor y({rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    expect(rows[i] < m, "gather_rows", "row index out of range");
    std::copy_n(x.data() + rows[i] * n, n, y.data() + i * n);
  }
  return a.graph->record("gather_rows", {a}, std::move(y), [rows = std::move(rows), n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gx[rows[i] * n + c] += g[i * n + c];
  });
}

Var scatter_rows(Var a, std::vector<std::size_t> rows, std::size_t out_rows) {
  const Tensor& x = a.value();
  const std::size_t n = x.cols();
  expect(rows.size() == x.size() / n, "scatter_rows", "one target row per input row");
  std::vector<bool> seen(out_rows, false);
  Tensor y({out_rows, n});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    expect(rows[i] < out_rows && !seen[rows[i]], "scatter_rows", "target rows must be unique and in range");
    seen[rows[i]] = true;
    std::copy_n(x.data() + i * n, n, y.data() + rows[i] * n);
  }
  return a.graph->record("scatter_rows", {a}, std::move(y), [rows = std::move(rows), n](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < n; ++c) gx[i * n + c] += g[rows[i] * n + c];
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  expect(!parts.empty(), "concat_rows", "nothing to concatenate");
  const std::size_t n = parts.front().value().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    expect(p.value().cols() == n, "concat_rows", "column counts differ");
    total += p.value().size() / n;
  }
  Tensor y({total, n});
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    std::copy_n(p.value().data(), p.value().size(), y.data() + off);
    off += p.value().size();
  }
  return parts.front().graph->record("concat_rows", parts, std::move(y), [offsets](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    for (std::size_t k = 0; k < offsets.size(); ++k) {
      if (!ctx.needs(k)) continue;
      Tensor& gk = ctx.grad_in(k);
      for (std::size_t i = 0; i < gk.size(); ++i) gk[i] += g[offsets[k] + i];
    }
  });
}

Var gather_elements(Var a, std::vector<std::size_t> flat_indices) {
  const Tensor& x = a.value();
  expect(!flat_indices.empty(), "gather_elements", "empty index list");
  Tensor y({flat_indices.size()});
  for (std::size_t i = 0; i < flat_indices.size(); ++i) {
    expect(flat_indices[i] < x.size(), "gather_elements", "index out of range");
    y[i] = x[flat_indices[i]];
  }
  return a.graph->record("gather_elements", {a}, std::move(y), [idx = std::move(flat_indices)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t i = 0; i < idx.size(); ++i) gx[idx[i]] += g[i];
  });
}

Var weighted_row_sum(Var weights, Var values) {
  const Tensor& W = weights.value();
  const Tensor& V = values.value();
  expect_matrix(W, "weighted_row_sum");
  const std::size_t F = W.dim(0), K = W.dim(1), D = V.cols();
  expect(V.size() / D == F * K, "weighted_row_sum", "values must have F*K rows");
  Tensor y({F, D});
  for (std::size_t f = 0; f < F; ++f)
    as_mat(y, F, D).row(static_cast<Eigen::Index>(f)).noalias() =
        as_mat(W, F, K).row(static_cast<Eigen::Index>(f)) *
        ConstMatMap(V.data() + f * K * D, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
  return weights.graph->record("weighted_row_sum", {weights, values}, std::move(y), [F, K, D](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    const Tensor& W = ctx.in(0);
    const Tensor& V = ctx.in(1);
    for (std::size_t f = 0; f < F; ++f) {
      const auto gf = as_mat(g, F, D).row(static_cast<Eigen::Index>(f));
      ConstMatMap Vf(V.data() + f * K * D, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
      if (ctx.needs(0)) as_mat(ctx.grad_in(0), F, K).row(static_cast<Eigen::Index>(f)).noalias() += gf * Vf.transpose();
      if (ctx.needs(1)) {
        MatMap gV(ctx.grad_in(1).data() + f * K * D, static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(D));
        gV.noalias() += as_mat(W, F, K).row(static_cast<Eigen::Index>(f)).transpose() * gf;
      }
    }
  });
}

namespace {

// (C*9, H*W) patch matrix for one image, zero padded.
void im2col3x3(const double* img, std::size_t C, std::size_t H, std::size_t W, double* cols) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        double* row = cols + ((c * 3 + ky) * 3 + kx) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          for (std::size_t x = 0; x < W; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            row[y * W + x] = (sy < 0 || sx < 0 || sy >= static_cast<long>(H) || sx >= static_cast<long>(W))
                                 ? 0.0
                                 : img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)];
          }
        }
      }
}

void col2im3x3(const double* cols, std::size_t C, std::size_t H, std::size_t W, double* img) {
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < 3; ++ky)
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const double* row = cols + ((c * 3 + ky) * 3 + kx) * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          const long sy = static_cast<long>(y) + static_cast<long>(ky) - 1;
          if (sy < 0 || sy >= static_cast<long>(H)) continue;
          for (std::size_t x = 0; x < W; ++x) {
            const long sx = static_cast<long>(x) + static_cast<long>(kx) - 1;
            if (sx < 0 || sx >= static_cast<long>(W)) continue;
            img[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx)] += row[y * W + x];
          }
        }
      }
}

}  // namespace

Var conv3x3(Var x, Var w, Var b) {
  const Tensor& X = x.value();
  const Tensor& Wt = w.value();
  if (X.ndim() != 4) expect(false, "conv3x3", "input must be (N,C,H,W), got " + shape_str(X.shape()));
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), Wd = X.dim(3);
  expect(Wt.ndim() == 4 && Wt.dim(1) == C && Wt.dim(2) == 3 && Wt.dim(3) == 3, "conv3x3",
         "weight must be (O," + std::to_string(C) + ",3,3), got " + shape_str(Wt.shape()));
  const std::size_t O = Wt.dim(0);
  expect(b.value().size() == O, "conv3x3", "bias width");
  const std::size_t HW = H * Wd, K = C * 9;
  Tensor Y({N, O, H, Wd});
  std::vector<double> cols(K * HW);
  const auto Wm = as_mat(Wt, O, K);
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < N; ++i) {
    im2col3x3(X.data() + i * C * HW, C, H, Wd, cols.data());
    MatMap Yi(Y.data() + i * O * HW, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(HW));
    Yi.noalias() = Wm * ConstMatMap(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(HW));
    for (std::size_t o = 0; o < O; ++o) Yi.row(static_cast<Eigen::Index>(o)).array() += B[o];
  }
  return x.graph->record("conv3x3", {x, w, b}, std::move(Y), [N, C, H, Wd, O, HW, K](BackwardContext& ctx) {
    const Tensor& G = ctx.grad_out();
    const Tensor& X = ctx.in(0);
    std::vector<double> cols(K * HW), dcols(K * HW);
    for (std::size_t i = 0; i < N; ++i) {
      ConstMatMap Gi(G.data() + i * O * HW, static_cast<Eigen::Index>(O), static_cast<Eigen::Index>(HW));
      if (ctx.needs(2)) {
        Tensor& gb = ctx.grad_in(2);
        for (std::size_t o = 0; o < O; ++o) gb[o] += Gi.row(static_cast<Eigen::Index>(o)).sum();
      }
      if (ctx.needs(1)) {
        im2col3x3(X.data() + i * C * HW, C, H, Wd, cols.data());
        as_mat(ctx.grad_in(1), O, K).noalias() +=
            Gi * ConstMatMap(cols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(HW)).transpose();
      }
      if (ctx.needs(0)) {
        MatMap dc(dcols.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(HW));
        dc.noalias() = as_mat(ctx.in(1), O, K).transpose() * Gi;
        col2im3x3(dcols.data(), C, H, Wd, ctx.grad_in(0).data() + i * C * HW);
      }
    }
  });
}

Var max_pool2x2(Var x) {
  const Tensor& X = x.value();
  expect(X.ndim() == 4 && X.dim(2) % 2 == 0 && X.dim(3) % 2 == 0, "max_pool2x2",
         "input must be (N,C,H,W) with even H and W, got " + shape_str(X.shape()));
  const std::size_t N = X.dim(0), C = X.dim(1), H = X.dim(2), W = X.dim(3);
  const std::size_t Ho = H / 2, Wo = W / 2;
  Tensor Y({N, C, Ho, Wo});
  std::vector<std::size_t> src(Y.size());
  std::uint64_t h = 0;
  for (std::size_t p = 0; p < N * C; ++p)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t xo = 0; xo < Wo; ++xo) {
        const std::size_t base = p * H * W + 2 * y * W + 2 * xo;
        const std::size_t cand[4] = {base, base + 1, base + W, base + W + 1};
        std::size_t best = cand[0];
        for (std::size_t k = 1; k < 4; ++k)
          if (X[cand[k]] > X[best]) best = cand[k];
        const std::size_t o = (p * Ho + y) * Wo + xo;
        Y[o] = X[best];
        src[o] = best;
        h = h * 31 + (best - base);
      }
  x.graph->note_branch(h);
  return x.graph->record("max_pool2x2", {x}, std::move(Y), [src = std::move(src)](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t o = 0; o < src.size(); ++o) gx[src[o]] += g[o];
  });
}

Var global_avg_pool(Var x) {
  const Tensor& X = x.value();
  if (X.ndim() != 4) expect(false, "global_avg_pool", "input must be (N,C,H,W), got " + shape_str(X.shape()));
  const std::size_t N = X.dim(0), C = X.dim(1), HW = X.dim(2) * X.dim(3);
  Tensor Y({N, C});
  for (std::size_t p = 0; p < N * C; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < HW; ++i) s += X[p * HW + i];
    Y[p] = s / static_cast<double>(HW);
  }
  return x.graph->record("global_avg_pool", {x}, std::move(Y), [N, C, HW](BackwardContext& ctx) {
    const Tensor& g = ctx.grad_out();
    Tensor& gx = ctx.grad_in(0);
    for (std::size_t p = 0; p < N * C; ++p)
      for (std::size_t i = 0; i < HW; ++i) gx[p * HW + i] += g[p] / static_cast<double>(HW);
  });
}

}  // namespace hst::ad
