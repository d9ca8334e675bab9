// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "ssdsgd/param_shard.hpp"

using namespace ssdsgd::ps;
using ssdsgd::DenseVec;
namespace opt = ssdsgd::optim;

namespace {

opt::HyperParams hp_for(std::size_t K) {
  opt::HyperParams hp;
  hp.K = K;
  hp.lr = 0.1;
  hp.m = 0.9;
  hp.wd = 0.01;
  return hp;
}

Message push(std::uint16_t w, std::uint64_t it, DenseVec g) { return {MessageKind::Push, 0, w, it, std::move(g)}; }
Message pull(std::uint16_t w, std::uint64_t it) { return {MessageKind::PullReq, 0, w, it, {}}; }

std::size_t count_kind(const std::vector<Message>& v, MessageKind k) {
  return static_cast<std::size_t>(std::count_if(v.begin(), v.end(), [k](const Message& m) { return m.kind == k; }));
}

}  // namespace

TEST(ParamShard, SingleWorkerUpdatesOnEveryPush) {
  const auto hp = hp_for(1);
  ParamShard shard(0, DenseVec{1.0, 2.0}, hp, ShardMode::Synchronous);
  DenseVec ref{1.0, 2.0};
  opt::ServerOptState st(2);
  for (std::uint64_t it = 0; it < 5; ++it) {
    const DenseVec g{0.5 * double(it), -1.0};
    const auto out = shard.handle(push(0, it, g));
    EXPECT_EQ(count_kind(out, MessageKind::PushAck), 1u);
    opt::server_momentum_update(ref, g, st, hp);
    EXPECT_EQ(shard.weight(), ref);
    EXPECT_EQ(shard.version(), it + 1);
  }
}

TEST(ParamShard, ArrivalOrderDoesNotChangeResult) {
  const std::size_t K = 4;
  const auto hp = hp_for(K);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n;
  std::vector<DenseVec> grads(K, DenseVec(8));
  for (auto& g : grads)
    for (double& x : g) x = n(rng) * 1e3;  // large spread makes summation order visible

  // Oracle: fold in worker order, divide, update.
  DenseVec acc(8, 0.0);
  for (const auto& g : grads)
    for (std::size_t i = 0; i < 8; ++i) acc[i] += g[i];
  for (double& v : acc) v /= double(K);
  DenseVec ref(8, 0.25);
  opt::ServerOptState st(8);
  opt::server_momentum_update(ref, acc, st, hp);

  std::vector<std::uint16_t> order(K);
  std::iota(order.begin(), order.end(), 0);
  do {
    ParamShard shard(0, DenseVec(8, 0.25), hp, ShardMode::Synchronous);
    for (auto w : order) shard.handle(push(w, 0, grads[w]));
    ASSERT_EQ(shard.weight(), ref);
    EXPECT_EQ(shard.gradients_applied(), K);
  } while (std::next_permutation(order.begin(), order.end()));
}

TEST(ParamShard, PullMidAggregationIsDeferredUntilCommit) {
  const auto hp = hp_for(3);
  ParamShard shard(0, DenseVec{0.0}, hp, ShardMode::Synchronous);
  shard.handle(push(0, 0, {1.0}));
  EXPECT_TRUE(shard.handle(pull(0, 0)).empty());
  shard.handle(push(1, 0, {1.0}));
  EXPECT_TRUE(shard.handle(pull(1, 0)).empty());
  EXPECT_EQ(shard.deferred_pull_count(), 2u);
  EXPECT_EQ(shard.pending_push_count(), 2u);
  const auto out = shard.handle(push(2, 0, {1.0}));
  ASSERT_EQ(count_kind(out, MessageKind::PullResp), 2u);
  for (const auto& m : out)
    if (m.kind == MessageKind::PullResp) {
      EXPECT_EQ(m.payload, shard.weight());
      EXPECT_EQ(m.iteration, 0u);
    }
  EXPECT_EQ(shard.deferred_pull_count(), 0u);
  // Once committed, pulls for that tag are answered at once.
  EXPECT_EQ(count_kind(shard.handle(pull(2, 0)), MessageKind::PullResp), 1u);
}

TEST(ParamShard, PullNeverSeesPartialAggregation) {
  const std::size_t K = 4;
  const auto hp = hp_for(K);
  std::mt19937_64 rng(9);
  ParamShard shard(0, DenseVec{0.0}, hp, ShardMode::Synchronous);
  std::uint64_t gradients_in_view = 0;
  // Each worker pushes then pulls; workers interleave randomly over 30 iterations.
  for (std::uint64_t it = 0; it < 30; ++it) {
    std::vector<Message> stream;
    for (std::uint16_t w = 0; w < K; ++w) {
      stream.push_back(push(w, it, {1.0}));
      stream.push_back(pull(w, it));
    }
    std::vector<std::size_t> cursor(K, 0);
    std::vector<std::uint16_t> live(K);
    std::iota(live.begin(), live.end(), 0);
    while (!live.empty()) {
      std::size_t slot = std::uniform_int_distribution<std::size_t>(0, live.size() - 1)(rng);
      const auto w = live[slot];
      for (const auto& r : shard.handle(stream[2 * w + cursor[w]]))
        if (r.kind == MessageKind::PullResp) {
          EXPECT_EQ(shard.gradients_applied(), (it + 1) * K);
          gradients_in_view = shard.gradients_applied();
        }
      if (++cursor[w] == 2) live.erase(live.begin() + static_cast<std::ptrdiff_t>(slot));
    }
  }
  EXPECT_EQ(gradients_in_view, 30 * K);
}

TEST(ParamShard, DuplicatePushIsProtocolError) {
  ParamShard shard(0, DenseVec{0.0}, hp_for(2), ShardMode::Synchronous);
  shard.handle(push(0, 0, {1.0}));
  EXPECT_THROW(shard.handle(push(0, 0, {1.0})), ssdsgd::ProtocolError);
}

TEST(ParamShard, PushForCommittedIterationIsProtocolError) {
  ParamShard shard(0, DenseVec{0.0}, hp_for(1), ShardMode::Synchronous);
  shard.handle(push(0, 0, {1.0}));
  shard.handle(push(0, 1, {1.0}));
  EXPECT_THROW(shard.handle(push(0, 0, {1.0})), ssdsgd::ProtocolError);
}

TEST(ParamShard, MalformedMessagesAreRejected) {
  ParamShard shard(3, DenseVec{0.0, 0.0}, hp_for(2), ShardMode::Synchronous);
  EXPECT_THROW(shard.handle({MessageKind::Push, 3, 0, 0, {1.0}}), ssdsgd::ProtocolError);         // length
  EXPECT_THROW(shard.handle({MessageKind::Push, 4, 0, 0, {1.0, 1.0}}), ssdsgd::ProtocolError);    // key
  EXPECT_THROW(shard.handle({MessageKind::Push, 3, 2, 0, {1.0, 1.0}}), ssdsgd::ProtocolError);    // worker
  EXPECT_THROW(shard.handle({MessageKind::PullResp, 3, 0, 0, {1.0, 1.0}}), ssdsgd::ProtocolError);
  shard.handle({MessageKind::PullReq, 3, 0, 5, {}});
  EXPECT_THROW(shard.handle({MessageKind::PullReq, 3, 0, 4, {}}), ssdsgd::ProtocolError);  // tag regressed
}

TEST(ParamShard, PushesAheadOfTheBarrierWaitTheirTurn) {
  const auto hp = hp_for(2);
  ParamShard shard(0, DenseVec{0.0}, hp, ShardMode::Synchronous);
  shard.handle(push(0, 0, {1.0}));
  shard.handle(push(0, 1, {2.0}));
  shard.handle(push(0, 2, {3.0}));
  EXPECT_EQ(shard.version(), 0u);
  shard.handle(push(1, 0, {1.0}));
  EXPECT_EQ(shard.version(), 1u);
  shard.handle(push(1, 1, {2.0}));
  shard.handle(push(1, 2, {3.0}));
  EXPECT_EQ(shard.version(), 3u);

  DenseVec ref{0.0};
  opt::ServerOptState st(1);
  for (double g : {1.0, 2.0, 3.0}) opt::server_momentum_update(ref, DenseVec{g}, st, hp);
  EXPECT_EQ(shard.weight(), ref);
}

TEST(ParamShard, AsynchronousAppliesEachPushAndAnswersPullsAtOnce) {
  const auto hp = hp_for(3);
  ParamShard shard(0, DenseVec{0.0}, hp, ShardMode::Asynchronous);
  DenseVec ref{0.0};
  opt::ServerOptState st(1);
  shard.handle(push(2, 0, {1.0}));
  opt::server_momentum_update(ref, DenseVec{1.0}, st, hp);
  EXPECT_EQ(shard.weight(), ref);
  const auto out = shard.handle(pull(0, 0));
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].payload, ref);
  EXPECT_EQ(shard.version(), 1u);
}

TEST(ParamShard, CommitHookSeesEveryVersion) {
  ParamShard shard(0, DenseVec{0.0}, hp_for(1), ShardMode::Synchronous);
  std::vector<std::uint64_t> versions;
  shard.set_commit_hook([&](std::uint32_t, std::uint64_t v, const DenseVec&) { versions.push_back(v); });
  for (std::uint64_t it = 0; it < 4; ++it) shard.handle(push(0, it, {1.0}));
  EXPECT_EQ(versions, (std::vector<std::uint64_t>{1, 2, 3, 4}));
}

TEST(Server, RoutesByKeyRoundRobin) {
  EXPECT_EQ(server_for_key(0, 3), 0u);
  EXPECT_EQ(server_for_key(4, 3), 1u);
  Server s;
  s.add_shard(ParamShard(1, DenseVec{0.0}, hp_for(1), ShardMode::Synchronous));
  EXPECT_NO_THROW(s.handle({MessageKind::Push, 1, 0, 0, {1.0}}));
  EXPECT_THROW(s.handle({MessageKind::Push, 2, 0, 0, {1.0}}), ssdsgd::ProtocolError);
}
