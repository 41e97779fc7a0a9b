#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hst/error.hpp"
#include "hst/ops.hpp"
#include "hst/ssm.hpp"
#include "oracles.hpp"

using namespace hst;
using namespace hst::testing;

TEST(Zoh, LnTwoCase) {
  const auto s = discretize(-1.0, 1.0, std::log(2.0));
  EXPECT_NEAR(s.a_bar, 0.5, 1e-15);
  EXPECT_NEAR(s.b_bar, 0.5, 1e-15);
}

TEST(Zoh, SecondClosedFormCase) {
  const auto s = discretize(-2.0, 3.0, 1.0);
  EXPECT_NEAR(s.a_bar, std::exp(-2.0), 1e-15);
  EXPECT_NEAR(s.a_bar, 0.135335, 1e-6);
  EXPECT_NEAR(s.b_bar, 1.296997, 1e-6);
}

TEST(Zoh, SmallStepLimit) {
  for (double delta : {1e-9, 1e-8, 1e-7}) {
    const auto s = discretize(-0.7, 2.0, delta);
    EXPECT_NEAR(s.a_bar, 1.0, 1e-6);
    EXPECT_NEAR(s.b_bar / (delta * 2.0), 1.0, 1e-6);
  }
  // continuity across the Taylor threshold
  const double a = -1.0, lo = 0.999e-6, hi = 1.001e-6;
  EXPECT_NEAR(discretize(a, 1.0, lo).b_bar / lo, discretize(a, 1.0, hi).b_bar / hi, 1e-9);
}

TEST(Zoh, Errors) {
  EXPECT_THROW(discretize(-1.0, 1.0, 0.0), Error);
  EXPECT_THROW(discretize(-1.0, 1.0, -0.1), Error);
  EXPECT_THROW(discretize(1.0, 1.0, 0.5), Error);
}

TEST(Scan, ScalarTimeInvariantCase) {
  ad::Graph g;
  const double ln2 = std::log(2.0);
  const Tensor y = scan_recurrence(g.constant(Tensor({3, 1}, {1, 1, 1})), g.constant(Tensor({3, 1}, {ln2, ln2, ln2})),
                                   g.constant(Tensor({1, 1}, {-1.0})), g.constant(Tensor({3, 1}, {1, 1, 1})),
                                   g.constant(Tensor({3, 1}, {1, 1, 1})))
                       .value();
  EXPECT_NEAR(y[0], 0.5, 1e-15);
  EXPECT_NEAR(y[1], 0.75, 1e-15);
  EXPECT_NEAR(y[2], 0.875, 1e-15);
}

TEST(Scan, MatchesNaiveOracle) {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const RawSsm p = random_ssm(8, 8, rng);
    const Tensor Z = random_tensor({16, 8}, rng, -1.5, 1.5);
    for (bool backward : {false, true}) {
      ad::Graph g;
      const Tensor got =
          selective_scan(g.constant(Z), constants(g, p), backward ? ScanDirection::Backward : ScanDirection::Forward)
              .value();
      const auto want = naive_scan(Z, p, backward);
      for (std::size_t t = 0; t < 16; ++t)
        for (std::size_t c = 0; c < 8; ++c)
          ASSERT_NEAR(got.at(t, c), static_cast<double>(want[t][c]), 1e-10) << "trial " << trial;
    }
  }
}

TEST(Scan, ZeroInputGivesZero) {
  std::mt19937_64 rng(2);
  const RawSsm p = random_ssm(4, 3, rng);
  ad::Graph g;
  const Tensor y = selective_scan(g.constant(Tensor({10, 4})), constants(g, p), ScanDirection::Forward).value();
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Scan, LongSequenceStaysFinite) {
  std::mt19937_64 rng(3);
  const RawSsm p = random_ssm(8, 4, rng);
  const Tensor Z = random_tensor({8192, 8}, rng, -3.0, 3.0);
  ad::Graph g;
  const Tensor y = selective_scan(g.constant(Z), constants(g, p), ScanDirection::Forward).value();
  EXPECT_TRUE(y.all_finite());
  double mx = 0.0;
  for (double v : y.values()) mx = std::max(mx, std::abs(v));
  EXPECT_LT(mx, 1e6);
}

TEST(Scan, ShapeErrors) {
  ad::Graph g;
  auto c = [&](Shape s, double v = 1.0) { return g.constant(Tensor(std::move(s), v)); };
  EXPECT_THROW(scan_recurrence(c({3, 2}), c({3, 1}), c({2, 2}, -1), c({3, 2}), c({3, 2})), Error);
  EXPECT_THROW(scan_recurrence(c({3, 2}), c({3, 2}), c({2, 2}, 1), c({3, 2}), c({3, 2})), Error);
  EXPECT_THROW(scan_recurrence(c({3, 2}), c({3, 2}, 0.0), c({2, 2}, -1), c({3, 2}), c({3, 2})), Error);
  EXPECT_THROW(scan_recurrence(c({3, 2}), c({3, 2}), c({2, 2}, -1), c({4, 2}), c({3, 2})), Error);
}

TEST(BiMamba, TiedParametersCommuteWithReversal) {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    const RawSsm p = random_ssm(6, 4, rng);
    const Tensor Z = random_tensor({25, 6}, rng, -2, 2);
    const Tensor gamma = random_tensor({6}, rng, 0.5, 1.5), beta = random_tensor({6}, rng);
    auto run = [&](const Tensor& z) {
      ad::Graph g;
      BiMambaParams bp{g.constant(gamma), g.constant(beta), constants(g, p), constants(g, p), true};
      return bimamba_forward(g.constant(z), bp).value();
    };
    const Tensor a = run(reverse_rows(Z)), b = reverse_rows(run(Z));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-9);
  }
}

TEST(BiMamba, ZeroInputWithResidual) {
  std::mt19937_64 rng(5);
  const RawSsm p = random_ssm(4, 3, rng);
  ad::Graph g;
  BiMambaParams bp{g.constant(Tensor({4}, 1.0)), g.constant(Tensor({4})), constants(g, p), constants(g, p), true};
  const Tensor y = bimamba_forward(g.constant(Tensor({7, 4})), bp).value();
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(BiMamba, EqualsSumOfSeparateScans) {
  std::mt19937_64 rng(6);
  const RawSsm f = random_ssm(5, 3, rng), b = random_ssm(5, 3, rng);
  const Tensor Z = random_tensor({12, 5}, rng), gamma = random_tensor({5}, rng, 0.5, 1.5), beta = random_tensor({5}, rng);
  ad::Graph g;
  BiMambaParams bp{g.constant(gamma), g.constant(beta), constants(g, f), constants(g, b), false};
  const Tensor y = bimamba_forward(g.constant(Z), bp).value();
  // layer norm by hand, then both oracle scans
  Tensor zn(Z.shape());
  for (std::size_t t = 0; t < 12; ++t) {
    double mu = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 5; ++c) mu += Z.at(t, c) / 5.0;
    for (std::size_t c = 0; c < 5; ++c) var += (Z.at(t, c) - mu) * (Z.at(t, c) - mu) / 5.0;
    for (std::size_t c = 0; c < 5; ++c) zn.at(t, c) = (Z.at(t, c) - mu) / std::sqrt(var + 1e-5) * gamma[c] + beta[c];
  }
  const auto yf = naive_scan(zn, f, false), yb = naive_scan(zn, b, true);
  for (std::size_t t = 0; t < 12; ++t)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(y.at(t, c), static_cast<double>(yf[t][c] + yb[t][c]), 1e-12);
}

TEST(BiMamba, GradientsPassFiniteDifferences) {
  std::mt19937_64 rng(7);
  const std::size_t T = 6, d = 3, n = 2;
  ad::ParamSet params;
  params["z"] = random_tensor({T, d}, rng);
  params["gamma"] = random_tensor({d}, rng, 0.5, 1.5);
  params["beta"] = random_tensor({d}, rng);
  for (const char* dir : {"f.", "b."}) {
    const RawSsm r = random_ssm(d, n, rng);
    params[std::string(dir) + "A_log"] = r.A_log;
    params[std::string(dir) + "B"] = r.B_proj;
    params[std::string(dir) + "C"] = r.C_proj;
    params[std::string(dir) + "dtw"] = r.dt_weight;
    params[std::string(dir) + "dtb"] = r.dt_bias;
  }
  auto build = [](ad::Graph& g, const ad::ParamSet& p) {
    auto P = [&](const std::string& k) { return g.parameter(k, p.at(k)); };
    auto ssm = [&](const std::string& dir) {
      return SsmParams{P(dir + "A_log"), P(dir + "B"), P(dir + "C"), P(dir + "dtw"), P(dir + "dtb")};
    };
    BiMambaParams bp{P("gamma"), P("beta"), ssm("f."), ssm("b."), true};
    return hst::testing::weighted_probe(bimamba_forward(P("z"), bp));
  };
  const auto report = ad::check_gradients(build, params, 1e-5, 1e-4);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
}
