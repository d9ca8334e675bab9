// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ssdsgd/optim.hpp"

namespace opt = ssdsgd::optim;
using ssdsgd::DenseVec;

namespace {

opt::HyperParams base_hp() {
  opt::HyperParams hp;
  hp.lr = 0.1;
  hp.m = 0.9;
  hp.wd = 0.0;
  return hp;
}

// Scalar momentum recurrence with constant gradient g; returns w_0..w_T.
std::vector<double> scalar_trajectory(double g, double lr, double m, int T) {
  std::vector<double> w{0.0};
  double mom = 0.0;
  for (int t = 0; t < T; ++t) {
    mom = m * mom - lr * g;
    w.push_back(w.back() + mom);
  }
  return w;
}

}  // namespace

TEST(Optim, ValidateAcceptsDefaults) { EXPECT_NO_THROW(opt::validate(opt::HyperParams{})); }

TEST(Optim, ValidateRejectsEachInvariant) {
  auto expect_field = [](opt::HyperParams hp, const std::string& field) {
    try {
      opt::validate(hp);
      ADD_FAILURE() << "accepted " << field;
    } catch (const ssdsgd::ConfigError& e) {
      EXPECT_EQ(e.field(), field);
    }
  };
  auto hp = opt::HyperParams{};
  hp.lr = 0;
  expect_field(hp, "optim.lr");
  hp = {};
  hp.loc_lr = -1;
  expect_field(hp, "optim.loc_lr");
  hp = {};
  hp.m = 1.0;
  expect_field(hp, "optim.momentum");
  hp = {};
  hp.k = 0;
  expect_field(hp, "optim.k");
  hp = {};
  hp.alpha = -0.1;
  expect_field(hp, "optim.alpha");
  hp = {};
  hp.k = 5;
  hp.wp = 500;
  expect_field(hp, "optim.warmup");
  hp.wp = 499;
  EXPECT_NO_THROW(opt::validate(hp));
  hp.wp = 0;
  hp.k = 1;
  EXPECT_NO_THROW(opt::validate(hp));
  hp.k = 2;
  expect_field(hp, "optim.warmup");
}

TEST(Optim, ServerUpdateZeroLrOnlyDecaysMomentum) {
  auto hp = base_hp();
  hp.lr = 0.0;
  DenseVec w{1.0, -2.0};
  opt::ServerOptState st(2);
  st.momentum = {0.5, 1.0};
  opt::server_momentum_update(w, DenseVec{3.0, 4.0}, st, hp);
  EXPECT_EQ(st.momentum, (DenseVec{0.9 * 0.5, 0.9 * 1.0}));
  EXPECT_EQ(w, (DenseVec{1.0 + 0.9 * 0.5, -2.0 + 0.9}));
}

TEST(Optim, ServerUpdateWithoutMomentumIsPlainSgdBitwise) {
  auto hp = base_hp();
  hp.m = 0.0;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n;
  DenseVec w(10), ref(10);
  for (std::size_t i = 0; i < w.size(); ++i) ref[i] = w[i] = n(rng);
  opt::ServerOptState st(10);
  for (int step = 0; step < 50; ++step) {
    DenseVec g(10);
    for (double& x : g) x = n(rng);
    opt::server_momentum_update(w, g, st, hp);
    for (std::size_t i = 0; i < ref.size(); ++i) ref[i] = ref[i] - hp.lr * g[i];
  }
  EXPECT_EQ(w, ref);
}

TEST(Optim, ServerUpdateStepConvergesToGeometricLimit) {
  const auto hp = base_hp();
  DenseVec w{0.0};
  opt::ServerOptState st(1);
  double prev = 0.0;
  const auto ref = scalar_trajectory(1.0, hp.lr, hp.m, 500);
  for (int t = 0; t < 500; ++t) {
    prev = w[0];
    opt::server_momentum_update(w, DenseVec{1.0}, st, hp);
    EXPECT_DOUBLE_EQ(w[0], ref[t + 1]);
  }
  EXPECT_NEAR(w[0] - prev, -hp.lr * 1.0 / (1 - hp.m), 1e-12);
}

TEST(Optim, GradSyncZeroWhenWeightsUnchanged) {
  opt::GluState st;
  st.pre_weight = {1.0, 2.0};
  const auto g = opt::glu_grad_sync(DenseVec{1.0, 2.0}, st, base_hp());
  EXPECT_EQ(g, (DenseVec{0.0, 0.0}));
}

TEST(Optim, GradSyncRecoversConstantGradient) {
  for (std::uint32_t k : {1u, 5u}) {
    auto hp = base_hp();
    hp.k = k;
    const auto w = scalar_trajectory(1.0, hp.lr, hp.m, 500);
    opt::GluState st;
    st.pre_weight = {w[500 - k]};
    const auto g = opt::glu_grad_sync(DenseVec{w[500]}, st, hp);
    EXPECT_LE(std::abs(g[0] - 1.0), 1e-3) << "k=" << k;
  }
}

TEST(Optim, GradSyncErrorBoundAcrossMomenta) {
  for (double m : {0.0, 0.5, 0.9, 0.99}) {
    auto hp = base_hp();
    hp.m = m;
    const auto w = scalar_trajectory(2.0, hp.lr, m, 500);
    opt::GluState st;
    st.pre_weight = {w[499]};
    const double g = opt::glu_grad_sync(DenseVec{w[500]}, st, hp)[0];
    EXPECT_NEAR(g, 2.0 * (1 - std::pow(m, 500)), 1e-9) << "m=" << m;
  }
}

TEST(Optim, GradSyncRequiresPrimedState) {
  EXPECT_THROW(opt::glu_grad_sync(DenseVec{1.0}, opt::GluState{}, base_hp()), ssdsgd::ProtocolError);
}

TEST(Optim, GluZeroLocalLrStillCounts) {
  auto hp = base_hp();
  hp.loc_lr = 0.0;
  DenseVec w{1.0, 2.0};
  opt::GluState st;
  opt::glu_local_update(w, DenseVec{5.0, 5.0}, st, hp);
  EXPECT_EQ(w, (DenseVec{1.0, 2.0}));
  EXPECT_EQ(st.loc_update, 1u);
}

TEST(Optim, GluWithUnitAlphaZeroBetaIsLocalSgdBitwise) {
  auto hp = base_hp();
  hp.alpha = 1.0;
  hp.beta = 0.0;
  hp.loc_lr = 0.37;
  hp.k = 3;
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  DenseVec a(6), b(6);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = b[i] = n(rng);
  opt::GluState st;
  for (int t = 0; t < 40; ++t) {
    DenseVec g(6);
    for (double& x : g) x = n(rng);
    opt::glu_local_update(a, g, st, hp);
    opt::local_sgd_update(b, g, hp);
    ASSERT_EQ(a, b) << "step " << t;
  }
}

TEST(Optim, GluStepMatchesHandComputation) {
  auto hp = base_hp();
  hp.alpha = 2.0;
  hp.beta = 0.5;
  hp.wd = 0.01;
  hp.loc_lr = 0.4;
  hp.k = 2;
  opt::GluState st;
  st.pre_weight = {1.0};
  st.loc_update = 3;
  DenseVec w{0.8};
  opt::glu_local_update(w, DenseVec{0.25}, st, hp);
  const double gs = (1.0 - 0.8) * (1 - 0.9) / (0.1 * 2);
  EXPECT_DOUBLE_EQ(w[0], 0.8 - 0.4 * (2.0 * 0.25 + 0.01 * 0.8 + 0.5 * gs));
  EXPECT_EQ(st.pre_weight, DenseVec{1.0});  // 3 % 2 != 0: no refresh
  EXPECT_EQ(st.loc_update, 4u);
}

TEST(Optim, GluRefreshesOnKBoundaryBeforeStepping) {
  auto hp = base_hp();
  hp.k = 2;
  opt::GluState st;
  st.pre_weight = {5.0};
  st.loc_update = 4;
  DenseVec w{3.0};
  const double gs = (5.0 - 3.0) * (1 - hp.m) / (hp.lr * 2);
  opt::glu_local_update(w, DenseVec{0.0}, st, hp);
  EXPECT_EQ(st.pre_weight, DenseVec{3.0});
  EXPECT_DOUBLE_EQ(w[0], 3.0 - hp.loc_lr * hp.beta * gs);
}

TEST(Optim, GluRefreshCadence) {
  for (std::uint32_t k : {1u, 2u, 3u, 5u}) {
    auto hp = base_hp();
    hp.k = k;
    opt::GluState st;
    DenseVec w{0.0};
    int refreshes = 0;
    const int T = 37;
    for (int t = 0; t < T; ++t) {
      w[0] = static_cast<double>(t + 1);  // distinct weight each step
      const DenseVec before = st.pre_weight;
      DenseVec probe = w;
      opt::glu_local_update(probe, DenseVec{0.0}, st, hp);
      if (!before.empty() && st.pre_weight != before) ++refreshes;
    }
    EXPECT_EQ(refreshes, (T - 1) / static_cast<int>(k)) << "k=" << k;
  }
}

TEST(Optim, LocalSgdIdentities) {
  auto hp = base_hp();
  DenseVec w{1.0, 2.0};
  opt::local_sgd_update(w, DenseVec{0.0, 0.0}, hp);
  EXPECT_EQ(w, (DenseVec{1.0, 2.0}));
  hp.loc_lr = 0.0;
  opt::local_sgd_update(w, DenseVec{3.0, 3.0}, hp);
  EXPECT_EQ(w, (DenseVec{1.0, 2.0}));
}

TEST(Optim, LocalSgdComposesOnLinearLoss) {
  // Loss c.w has constant gradient c, so two steps equal one step with 2c.
  auto hp = base_hp();
  hp.loc_lr = 0.25;
  const DenseVec c{1.5, -0.5, 2.0};
  DenseVec two{0.1, 0.2, 0.3}, one = two;
  opt::local_sgd_update(two, c, hp);
  opt::local_sgd_update(two, c, hp);
  DenseVec c2(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) c2[i] = 2 * c[i];
  opt::local_sgd_update(one, c2, hp);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(two[i], one[i], 1e-15);
}

TEST(Optim, LengthMismatchIsProtocolError) {
  DenseVec w{1.0, 2.0};
  opt::ServerOptState st(2);
  EXPECT_THROW(opt::server_momentum_update(w, DenseVec{1.0}, st, base_hp()), ssdsgd::ProtocolError);
  opt::GluState gs;
  EXPECT_THROW(opt::glu_local_update(w, DenseVec{1.0}, gs, base_hp()), ssdsgd::ProtocolError);
  EXPECT_THROW(opt::local_sgd_update(w, DenseVec{1.0}, base_hp()), ssdsgd::ProtocolError);
}
