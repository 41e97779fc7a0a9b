#pragma once

// Independent reference implementations shared by the unit tests and the
// acceptance run. Dense matrices and plain loops only; nothing here calls the
// library code under test.

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cmath>
#include <random>
#include <vector>

#include "hst/alignment.hpp"
#include "hst/ssm.hpp"
#include "test_util.hpp"

namespace hst::testing {

inline Eigen::MatrixXd to_mat(const Tensor& t) {
  Eigen::MatrixXd m(t.rows(), t.cols());
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m(r, c) = t.at(r, c);
  return m;
}

// LeakyReLU(Dv^-1/2 H W H^T Dv^-1/2 X Theta), Dv = row sums of H W H^T.
inline Eigen::MatrixXd dense_hyperconv(const Eigen::MatrixXd& H, const Eigen::VectorXd& w, const Eigen::MatrixXd& X,
                                       const Eigen::MatrixXd& theta) {
  const Eigen::MatrixXd A = H * w.asDiagonal() * H.transpose();
  const Eigen::VectorXd dv = A.rowwise().sum();
  const Eigen::VectorXd s = dv.array().rsqrt();
  const Eigen::MatrixXd pre = s.asDiagonal() * A * s.asDiagonal() * X * theta;
  return pre.unaryExpr([](double v) { return v > 0 ? v : 0.01 * v; });
}

inline Points gaussian_points(std::mt19937_64& rng, int rows = 68) {
  std::normal_distribution<double> n(0.0, 1.0);
  Points p(rows, 3);
  for (int i = 0; i < p.size(); ++i) p.data()[i] = n(rng);
  return p;
}

inline Eigen::Matrix3d random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

struct RawSsm {
  Tensor A_log, B_proj, C_proj, dt_weight, dt_bias;
};

inline RawSsm random_ssm(std::size_t d, std::size_t n, std::mt19937_64& rng) {
  return {random_tensor({d, n}, rng, -1.0, 1.0), random_tensor({d, n}, rng), random_tensor({d, n}, rng),
          random_tensor({d, d}, rng, -0.5, 0.5), random_tensor({d}, rng, -1.0, 1.0)};
}

inline SsmParams constants(ad::Graph& g, const RawSsm& r) {
  return {g.constant(r.A_log), g.constant(r.B_proj), g.constant(r.C_proj), g.constant(r.dt_weight),
          g.constant(r.dt_bias)};
}

// Materializes every A_bar, B_bar, C for each step and unrolls in long double.
inline std::vector<std::vector<long double>> naive_scan(const Tensor& Z, const RawSsm& p, bool backward) {
  const std::size_t T = Z.rows(), d = Z.cols(), n = p.A_log.cols();
  auto z = [&](std::size_t t, std::size_t c) -> long double { return Z.at(backward ? T - 1 - t : t, c); };
  std::vector<std::vector<long double>> y(T, std::vector<long double>(d, 0.0L));
  std::vector<long double> h(d * n, 0.0L);
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<long double> delta(d), B(n, 0.0L), C(n, 0.0L);
    for (std::size_t c = 0; c < d; ++c) {
      long double pre = p.dt_bias[c];
      for (std::size_t k = 0; k < d; ++k) pre += z(t, k) * p.dt_weight.at(k, c);
      delta[c] = std::log1p(std::exp(pre));
    }
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t k = 0; k < d; ++k) {
        B[s] += z(t, k) * p.B_proj.at(k, s);
        C[s] += z(t, k) * p.C_proj.at(k, s);
      }
    for (std::size_t c = 0; c < d; ++c) {
      long double acc = 0.0L;
      for (std::size_t s = 0; s < n; ++s) {
        const long double a = -std::exp(static_cast<long double>(p.A_log.at(c, s)));
        const long double abar = std::exp(delta[c] * a);
        const long double bbar = (abar - 1.0L) / a * B[s];
        h[c * n + s] = abar * h[c * n + s] + bbar * z(t, c);
        acc += C[s] * h[c * n + s];
      }
      y[backward ? T - 1 - t : t][c] = acc;
    }
  }
  return y;
}

inline Tensor reverse_rows(const Tensor& x) {
  Tensor r(x.shape());
  const std::size_t T = x.rows(), d = x.cols();
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t c = 0; c < d; ++c) r.at(t, c) = x.at(T - 1 - t, c);
  return r;
}

// mean -log softmax(logits)_y with max-shifted log-sum-exp
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.cols(); ++c) mx = std::max(mx, logits.at(i, c));
    double s = 0.0;
    for (std::size_t c = 0; c < logits.cols(); ++c) s += std::exp(logits.at(i, c) - mx);
    total += -(logits.at(i, static_cast<std::size_t>(labels[i])) - mx - std::log(s));
  }
  return total / static_cast<double>(labels.size());
}

}  // namespace hst::testing
