// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/message.hpp"
#include "ssdsgd/optim.hpp"

namespace ssdsgd::ps {

enum class ShardMode {
  Synchronous,   // aggregate K pushes per iteration, then update (SSGD, SSD-SGD)
  Asynchronous,  // apply every push immediately (ASGD)
};

/// Server-side state for one parameter key.
///
/// In synchronous mode each iteration tag needs exactly one push from each of
/// the K workers. Gradients are buffered and folded in worker-id order once
/// all K have arrived, so the result does not depend on arrival order. A
/// PullReq tagged n is answered only after the update for tag n commits.
class ParamShard {
 public:
  /// Called after every committed update with the new version and weight.
  using CommitHook = std::function<void(std::uint32_t key, std::uint64_t version, const DenseVec& weight)>;

  ParamShard(std::uint32_t key, DenseVec initial_weight, optim::HyperParams hp, ShardMode mode)
      : key_(key), weight_(std::move(initial_weight)), opt_state_(weight_.size()), hp_(hp), mode_(mode),
        grad_accumulator_(weight_.size(), 0.0), last_push_tag_(hp.K), last_pull_tag_(hp.K) {
    if (hp_.K < 1 || hp_.K > 0xffff) throw ConfigError("cluster.workers", "must be in [1, 65535]");
  }

  std::uint32_t key() const { return key_; }
  const DenseVec& weight() const { return weight_; }
  const optim::ServerOptState& opt_state() const { return opt_state_; }
  ShardMode mode() const { return mode_; }
  /// Number of committed updates.
  std::uint64_t version() const { return version_; }
  /// Gradients folded into committed updates so far.
  std::uint64_t gradients_applied() const { return gradients_applied_; }
  /// Pushes received for the oldest uncommitted iteration.
  std::size_t pending_push_count() const {
    auto it = pending_.find(version_);
    if (it == pending_.end()) return 0;
    std::size_t n = 0;
    for (const auto& g : it->second) n += g.has_value();
    return n;
  }
  std::size_t deferred_pull_count() const { return deferred_pulls_.size(); }

  void set_commit_hook(CommitHook hook) { on_commit_ = std::move(hook); }

  /// Handles Push or PullReq; returns the replies to deliver, in order.
  std::vector<Message> handle(const Message& msg) {
    if (msg.key != key_)
      throw ProtocolError("message for key " + std::to_string(msg.key) + " routed to shard " + std::to_string(key_));
    if (msg.worker_id >= hp_.K) throw ProtocolError("unknown worker id " + std::to_string(msg.worker_id));
    switch (msg.kind) {
      case MessageKind::Push: return on_push(msg);
      case MessageKind::PullReq: return on_pull(msg);
      default: throw ProtocolError("shard cannot handle " + std::string(to_string(msg.kind)));
    }
  }

 private:
  static void check_monotone(std::vector<std::optional<std::uint64_t>>& last, const Message& m, const char* what) {
    auto& prev = last[m.worker_id];
    if (prev && m.iteration < *prev)
      throw ProtocolError(std::string(what) + " iteration tag went backwards for worker " +
                          std::to_string(m.worker_id));
    prev = m.iteration;
  }

  Message reply(MessageKind kind, const Message& req, DenseVec payload = {}) const {
    return Message{kind, key_, req.worker_id, req.iteration, std::move(payload)};
  }

  std::vector<Message> on_push(const Message& m) {
    if (m.payload.size() != weight_.size())
      throw ProtocolError("push payload length " + std::to_string(m.payload.size()) + " != shard length " +
                          std::to_string(weight_.size()));
    check_monotone(last_push_tag_, m, "push");
    std::vector<Message> out;
    out.push_back(reply(MessageKind::PushAck, m));

    if (mode_ == ShardMode::Asynchronous) {
      optim::server_momentum_update(weight_, m.payload, opt_state_, hp_);
      ++gradients_applied_;
      commit();
      return out;
    }

    if (m.iteration < version_)
      throw ProtocolError("push for already committed iteration " + std::to_string(m.iteration));
    auto& slots = pending_[m.iteration];
    if (slots.empty()) slots.resize(hp_.K);
    if (slots[m.worker_id])
      throw ProtocolError("duplicate push from worker " + std::to_string(m.worker_id) + " for iteration " +
                          std::to_string(m.iteration));
    slots[m.worker_id] = m.payload;

    // Commit every complete iteration at the head of the queue.
    for (auto it = pending_.find(version_); it != pending_.end(); it = pending_.find(version_)) {
      auto& ready = it->second;
      bool complete = true;
      for (const auto& g : ready) complete = complete && g.has_value();
      if (!complete) break;
      std::fill(grad_accumulator_.begin(), grad_accumulator_.end(), 0.0);
      for (const auto& g : ready)
        for (std::size_t i = 0; i < grad_accumulator_.size(); ++i) grad_accumulator_[i] += (*g)[i];
      const double K = static_cast<double>(hp_.K);
      for (double& v : grad_accumulator_) v /= K;
      optim::server_momentum_update(weight_, grad_accumulator_, opt_state_, hp_);
      std::fill(grad_accumulator_.begin(), grad_accumulator_.end(), 0.0);
      gradients_applied_ += hp_.K;
      pending_.erase(it);
      commit();
      // Release pulls that were waiting on this iteration.
      while (!deferred_pulls_.empty() && deferred_pulls_.begin()->first < version_) {
        out.push_back(reply(MessageKind::PullResp, deferred_pulls_.begin()->second, weight_));
        deferred_pulls_.erase(deferred_pulls_.begin());
      }
    }
    return out;
  }

  std::vector<Message> on_pull(const Message& m) {
    check_monotone(last_pull_tag_, m, "pull");
    if (mode_ == ShardMode::Asynchronous || m.iteration < version_) return {reply(MessageKind::PullResp, m, weight_)};
    deferred_pulls_.emplace(m.iteration, m);
    return {};
  }

  void commit() {
    ++version_;
    if (on_commit_) on_commit_(key_, version_, weight_);
  }

  std::uint32_t key_;
  DenseVec weight_;
  optim::ServerOptState opt_state_;
  optim::HyperParams hp_;
  ShardMode mode_;
  DenseVec grad_accumulator_;
  std::uint64_t version_ = 0;
  std::uint64_t gradients_applied_ = 0;
  std::map<std::uint64_t, std::vector<std::optional<DenseVec>>> pending_;
  std::multimap<std::uint64_t, Message> deferred_pulls_;
  std::vector<std::optional<std::uint64_t>> last_push_tag_;
  std::vector<std::optional<std::uint64_t>> last_pull_tag_;
  CommitHook on_commit_;
};

/// A parameter server: the shards assigned to it, handled one message at a
/// time.
class Server {
 public:
  void add_shard(ParamShard shard) {
    const auto key = shard.key();
    shards_.emplace(key, std::move(shard));
  }

  std::vector<Message> handle(const Message& msg) {
    auto it = shards_.find(msg.key);
    if (it == shards_.end()) throw ProtocolError("server holds no shard for key " + std::to_string(msg.key));
    return it->second.handle(msg);
  }

  ParamShard& shard(std::uint32_t key) { return shards_.at(key); }
  const ParamShard& shard(std::uint32_t key) const { return shards_.at(key); }
  const std::map<std::uint32_t, ParamShard>& shards() const { return shards_; }
  std::map<std::uint32_t, ParamShard>& shards() { return shards_; }

 private:
  std::map<std::uint32_t, ParamShard> shards_;
};

/// Round-robin key placement across `servers`.
inline std::size_t server_for_key(std::uint32_t key, std::size_t servers) { return key % servers; }

}  // namespace ssdsgd::ps
