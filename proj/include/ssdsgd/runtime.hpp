// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/message.hpp"
#include "ssdsgd/metrics.hpp"
#include "ssdsgd/numkernel.hpp"
#include "ssdsgd/optim.hpp"
#include "ssdsgd/param_shard.hpp"
#include "ssdsgd/pipesim.hpp"
#include "ssdsgd/transport.hpp"

namespace ssdsgd::ps {

enum class Strategy { Ssgd, Asgd, SsdSgd };

inline std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::Ssgd: return "ssgd";
    case Strategy::Asgd: return "asgd";
    case Strategy::SsdSgd: return "ssd-sgd";
  }
  return "?";
}

inline Strategy parse_strategy(std::string_view s) {
  if (s == "ssgd") return Strategy::Ssgd;
  if (s == "asgd") return Strategy::Asgd;
  if (s == "ssd-sgd") return Strategy::SsdSgd;
  throw ConfigError("cluster.strategy", "unknown strategy '" + std::string(s) + "'");
}

/// Worker-side rule applied between pulls.
enum class LocalOptimizer {
  Sgd,
  Glu,
  /// No local step; the worker keeps its weights until the next pull lands.
  None,
};

inline std::string_view to_string(LocalOptimizer o) {
  switch (o) {
    case LocalOptimizer::Sgd: return "sgd";
    case LocalOptimizer::Glu: return "glu";
    case LocalOptimizer::None: return "none";
  }
  return "?";
}

inline LocalOptimizer parse_local_optimizer(std::string_view s) {
  if (s == "sgd") return LocalOptimizer::Sgd;
  if (s == "glu") return LocalOptimizer::Glu;
  if (s == "none") return LocalOptimizer::None;
  throw ConfigError("cluster.optimizer_local", "unknown local optimizer '" + std::string(s) + "'");
}

// Streams split off the master seed.
namespace seed_stream {
inline constexpr std::uint64_t kDataset = 0xD1;
inline constexpr std::uint64_t kInit = 0x1A;
inline constexpr std::uint64_t kScheduler = 0x5C;
inline constexpr std::uint64_t kBatches = 0xBA;
}  // namespace seed_stream

struct RuntimeConfig {
  numkernel::Architecture arch;
  optim::HyperParams hp;
  Strategy strategy = Strategy::SsdSgd;
  LocalOptimizer local_optimizer = LocalOptimizer::Glu;
  std::size_t servers = 1;
  std::size_t devices = 1;           // per worker; splits the batch
  std::uint64_t iterations = 2000;   // rounds, warm-up included
  std::uint64_t eval_interval = 50;
  std::uint64_t seed = 0;
  bool deterministic = true;
  bool asgd_momentum = true;
  TransportKind transport = TransportKind::InProcess;
  LinkModel link;
  std::chrono::milliseconds pull_timeout{2000};
  int pull_retries = 3;
  double init_scale = 0.1;
  bool instrument = false;
  // Modeled time per warm-up and per delay-stage iteration, for
  // MetricRecord::sim_time. Zero disables.
  double sim_warmup_iter = 0.0;
  double sim_delay_iter = 0.0;
};

inline std::vector<optim::FieldIssue> check(const RuntimeConfig& cfg) {
  auto issues = optim::check(cfg.hp);
  if (cfg.strategy != Strategy::SsdSgd)
    std::erase_if(issues, [](const optim::FieldIssue& i) { return i.field == "optim.warmup"; });
  if (cfg.hp.K > 0xffff) issues.push_back({"cluster.workers", "must be <= 65535"});
  if (cfg.servers < 1) issues.push_back({"cluster.servers", "must be >= 1"});
  if (cfg.devices < 1 || cfg.hp.B % cfg.devices != 0)
    issues.push_back({"cluster.devices", "must be >= 1 and divide the batch size"});
  if (cfg.iterations < 1) issues.push_back({"run.iterations", "must be >= 1"});
  if (cfg.eval_interval < 1) issues.push_back({"run.eval_interval", "must be >= 1"});
  if (cfg.arch.layers.empty()) issues.push_back({"model.kind", "model has no layers"});
  if (cfg.pull_retries < 0) issues.push_back({"cluster.pull_retries", "must be >= 0"});
  return issues;
}

inline void validate(const RuntimeConfig& cfg) {
  const auto issues = check(cfg);
  if (!issues.empty()) throw ConfigError(issues.front().field, issues.front().message);
}

// ---------------------------------------------------------------------------
// Worker

struct WorkerReplica {
  std::uint16_t id = 0;
  DenseVec local_weight;  // w'
  optim::GluState glu;
  std::uint64_t num = 0;  // iterations completed
  std::uint64_t t = 0;    // global version of the last applied pull
  Strategy strategy = Strategy::SsdSgd;
  LocalOptimizer local_optimizer = LocalOptimizer::Glu;
  /// Weights pulled in the previous iteration, waiting for this iteration's
  /// local update.
  std::optional<DenseVec> pending_pull;
};

/// What a worker does in iteration `num`.
struct StepPlan {
  bool local_update = false;
  bool pull = false;
  /// The pulled weight replaces w' before the next iteration. Otherwise it
  /// becomes the base of the next iteration's local update.
  bool blocking_pull = false;
};

/// Iterations 0..wp-1 are warm-up SSGD. Iteration wp hands off: it pushes
/// and pulls like SSGD, and its pull seeds w'. Later iterations push, run a
/// local update, and pull when num % k == k - 1.
inline StepPlan plan_step(Strategy s, const optim::HyperParams& hp, std::uint64_t num) {
  if (s != Strategy::SsdSgd || num <= hp.wp) return {false, true, true};
  return {true, num % hp.k == hp.k - 1, false};
}

/// Mean gradient of the worker's batch, computed per device and averaged.
inline DenseVec worker_gradient(const numkernel::Architecture& arch, std::span<const double> w,
                                const numkernel::Dataset& data, std::size_t batch_size, std::size_t devices,
                                std::uint64_t batch_seed, std::uint64_t worker, std::uint64_t num) {
  const auto batch = numkernel::sample_batch(data, batch_size, batch_seed, worker, num);
  DenseVec g(w.size(), 0.0);
  if (devices <= 1) {
    numkernel::grad_at(arch, w, batch, g);
    return g;
  }
  const std::size_t per = batch_size / devices;
  DenseVec part(w.size());
  for (std::size_t d = 0; d < devices; ++d) {
    numkernel::Minibatch sub{DenseMat(per, batch.features.cols), DenseVec(per)};
    for (std::size_t r = 0; r < per; ++r) {
      std::copy_n(batch.features.row(d * per + r).begin(), batch.features.cols, sub.features.row(r).begin());
      sub.labels[r] = batch.labels[d * per + r];
    }
    numkernel::grad_at(arch, w, sub, part);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += part[i];
  }
  for (double& v : g) v /= static_cast<double>(devices);
  return g;
}

/// Local step for a delay-stage iteration: rebase onto a pending pull, then
/// apply the configured rule with gradient `g`.
inline void apply_local_update(WorkerReplica& r, std::span<const double> g, const optim::HyperParams& hp) {
  if (r.pending_pull) {
    r.local_weight = std::move(*r.pending_pull);
    r.pending_pull.reset();
  }
  switch (r.local_optimizer) {
    case LocalOptimizer::Glu: optim::glu_local_update(r.local_weight, g, r.glu, hp); break;
    case LocalOptimizer::Sgd: optim::local_sgd_update(r.local_weight, g, hp); break;
    case LocalOptimizer::None: break;
  }
}

inline std::vector<Message> make_pushes(const numkernel::Architecture& arch, std::uint16_t worker,
                                        std::uint64_t num, std::span<const double> g) {
  std::vector<Message> out;
  out.reserve(arch.layers.size());
  for (std::uint32_t key = 0; key < arch.layers.size(); ++key) {
    const auto& l = arch.layers[key];
    out.push_back({MessageKind::Push, key, worker, num,
                   DenseVec(g.begin() + static_cast<std::ptrdiff_t>(l.offset),
                            g.begin() + static_cast<std::ptrdiff_t>(l.offset + l.length))});
  }
  return out;
}

inline std::vector<Message> make_pull_requests(const numkernel::Architecture& arch, std::uint16_t worker,
                                               std::uint64_t num) {
  std::vector<Message> out;
  for (std::uint32_t key = 0; key < arch.layers.size(); ++key) out.push_back({MessageKind::PullReq, key, worker, num, {}});
  return out;
}

/// Reassembles one pull (one PullResp per key) into a full weight vector.
class PullAssembler {
 public:
  PullAssembler() = default;
  PullAssembler(const numkernel::Architecture* arch, std::uint64_t tag)
      : arch_(arch), tag_(tag), weight_(arch->param_count()), have_(arch->layers.size(), false) {}

  std::uint64_t tag() const { return tag_; }
  bool active() const { return arch_ != nullptr; }
  /// Returns false for responses that belong to another pull.
  bool accept(const Message& m) {
    if (!active() || m.kind != MessageKind::PullResp || m.iteration != tag_ || m.key >= have_.size()) return false;
    const auto& l = arch_->layers[m.key];
    if (m.payload.size() != l.length) throw ProtocolError("pull response length mismatch for key " + std::to_string(m.key));
    if (have_[m.key]) return true;
    std::copy(m.payload.begin(), m.payload.end(), weight_.begin() + static_cast<std::ptrdiff_t>(l.offset));
    have_[m.key] = true;
    ++received_;
    return true;
  }
  bool complete() const { return active() && received_ == have_.size(); }
  std::vector<std::uint32_t> missing() const {
    std::vector<std::uint32_t> out;
    for (std::uint32_t k = 0; k < have_.size(); ++k)
      if (!have_[k]) out.push_back(k);
    return out;
  }
  DenseVec take() { return std::move(weight_); }

 private:
  const numkernel::Architecture* arch_ = nullptr;
  std::uint64_t tag_ = 0;
  DenseVec weight_;
  std::vector<bool> have_;
  std::size_t received_ = 0;
};

/// Installs a completed pull according to the plan of the iteration that
/// issued it.
inline void install_pull(WorkerReplica& r, DenseVec w, const StepPlan& plan, std::uint64_t tag) {
  r.t = tag + 1;
  if (plan.blocking_pull)
    r.local_weight = std::move(w);
  else
    r.pending_pull = std::move(w);
}

// ---------------------------------------------------------------------------
// Message log

struct LogEntry {
  MessageKind kind = MessageKind::Push;
  std::uint32_t key = 0;
  std::uint16_t worker = 0;
  std::uint64_t iteration = 0;

  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

/// Every delivered message, in delivery order.
class MessageLog {
 public:
  void record(const Message& m) {
    std::lock_guard lock(mu_);
    entries_.push_back({m.kind, m.key, m.worker_id, m.iteration});
  }
  std::vector<LogEntry> entries() const {
    std::lock_guard lock(mu_);
    return entries_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<LogEntry> entries_;
};

/// Messages of `kind` from/to `worker` on `key` with tags in [begin, end).
inline std::uint64_t count_messages(const std::vector<LogEntry>& log, MessageKind kind, std::uint16_t worker,
                                    std::uint32_t key, std::uint64_t begin = 0,
                                    std::uint64_t end = std::numeric_limits<std::uint64_t>::max()) {
  std::uint64_t n = 0;
  for (const auto& e : log)
    n += e.kind == kind && e.worker == worker && e.key == key && e.iteration >= begin && e.iteration < end;
  return n;
}

// ---------------------------------------------------------------------------
// Snapshots and results

/// Global weights captured by shard commit hooks.
class SnapshotStore {
 public:
  SnapshotStore(const numkernel::Architecture& arch, std::uint64_t every, std::uint64_t final_version)
      : arch_(arch), every_(every), final_(final_version), start_(std::chrono::steady_clock::now()) {}

  ParamShard::CommitHook hook() {
    return [this](std::uint32_t key, std::uint64_t version, const DenseVec& w) {
      if (version % every_ != 0 && version != final_) return;
      const double t = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      std::lock_guard lock(mu_);
      auto& snap = snaps_[version];
      if (snap.weight.empty()) {
        snap.weight.assign(arch_.param_count(), 0.0);
        snap.have.assign(arch_.layers.size(), false);
      }
      const auto& l = arch_.layers[key];
      std::copy(w.begin(), w.end(), snap.weight.begin() + static_cast<std::ptrdiff_t>(l.offset));
      snap.have[key] = true;
      snap.wall = std::max(snap.wall, t);
    };
  }

  struct Snapshot {
    DenseVec weight;
    std::vector<bool> have;
    double wall = 0.0;
    bool complete() const { return !have.empty() && std::all_of(have.begin(), have.end(), [](bool b) { return b; }); }
  };

  std::map<std::uint64_t, Snapshot> take() {
    std::lock_guard lock(mu_);
    return std::move(snaps_);
  }

 private:
  const numkernel::Architecture& arch_;
  std::uint64_t every_;
  std::uint64_t final_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mu_;
  std::map<std::uint64_t, Snapshot> snaps_;
};

struct RunResult {
  std::vector<MetricRecord> records;
  DenseVec final_weight;
  std::vector<LogEntry> messages;
  double wall_seconds = 0.0;
  std::optional<pipesim::TimingProfile> measured_profile;
};

namespace detail {

inline optim::HyperParams shard_hp(const RuntimeConfig& cfg) {
  auto hp = cfg.hp;
  if (cfg.strategy == Strategy::Asgd && !cfg.asgd_momentum) hp.m = 0.0;
  return hp;
}

inline ShardMode shard_mode(Strategy s) {
  return s == Strategy::Asgd ? ShardMode::Asynchronous : ShardMode::Synchronous;
}

inline DenseVec initial_weight(const RuntimeConfig& cfg) {
  numkernel::Model m{cfg.arch, DenseVec(cfg.arch.param_count(), 0.0)};
  numkernel::init_params(m, derive_seed(cfg.seed, seed_stream::kInit), cfg.init_scale);
  return m.params;
}

inline std::vector<Server> make_servers(const RuntimeConfig& cfg, const DenseVec& w0, SnapshotStore* snaps) {
  std::vector<Server> servers(cfg.servers);
  const auto hp = shard_hp(cfg);
  for (std::uint32_t key = 0; key < cfg.arch.layers.size(); ++key) {
    const auto& l = cfg.arch.layers[key];
    ParamShard shard(key,
                     DenseVec(w0.begin() + static_cast<std::ptrdiff_t>(l.offset),
                              w0.begin() + static_cast<std::ptrdiff_t>(l.offset + l.length)),
                     hp, shard_mode(cfg.strategy));
    if (snaps) shard.set_commit_hook(snaps->hook());
    servers[server_for_key(key, cfg.servers)].add_shard(std::move(shard));
  }
  return servers;
}

inline std::vector<WorkerReplica> make_workers(const RuntimeConfig& cfg, const DenseVec& w0) {
  std::vector<WorkerReplica> out(cfg.hp.K);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].id = static_cast<std::uint16_t>(i);
    out[i].local_weight = w0;
    out[i].strategy = cfg.strategy;
    out[i].local_optimizer = cfg.local_optimizer;
  }
  return out;
}

inline std::uint64_t final_version(const RuntimeConfig& cfg) {
  return cfg.strategy == Strategy::Asgd ? cfg.iterations * cfg.hp.K : cfg.iterations;
}

inline std::uint64_t snapshot_every(const RuntimeConfig& cfg) {
  return cfg.strategy == Strategy::Asgd ? cfg.eval_interval * cfg.hp.K : cfg.eval_interval;
}

inline double sim_time_at(const RuntimeConfig& cfg, std::uint64_t it) {
  const std::uint64_t warm = cfg.strategy == Strategy::SsdSgd ? std::min(it, cfg.hp.wp) : it;
  return static_cast<double>(warm) * cfg.sim_warmup_iter + static_cast<double>(it - warm) * cfg.sim_delay_iter;
}

/// Turns snapshots into metric rows. Loss and accuracy are taken over the
/// full dataset at the global weight.
inline std::vector<MetricRecord> build_records(const RuntimeConfig& cfg, const numkernel::Dataset& data,
                                               std::map<std::uint64_t, SnapshotStore::Snapshot> snaps,
                                               const std::vector<LogEntry>& log, bool keep_wall) {
  std::vector<MetricRecord> out;
  const auto full = data.as_batch();
  const std::uint64_t per_round = cfg.strategy == Strategy::Asgd ? cfg.hp.K : 1;
  // Tag -> count prefix sums for worker 0, key 0.
  std::vector<std::uint64_t> push_tags, pull_tags;
  for (const auto& e : log) {
    if (e.worker != 0 || e.key != 0) continue;
    if (e.kind == MessageKind::Push) push_tags.push_back(e.iteration);
    if (e.kind == MessageKind::PullReq) pull_tags.push_back(e.iteration);
  }
  std::sort(push_tags.begin(), push_tags.end());
  std::sort(pull_tags.begin(), pull_tags.end());
  pull_tags.erase(std::unique(pull_tags.begin(), pull_tags.end()), pull_tags.end());
  for (auto& [version, snap] : snaps) {
    if (!snap.complete()) continue;
    MetricRecord r;
    r.iteration = version / per_round;
    r.epoch = static_cast<double>(r.iteration * cfg.hp.K * cfg.hp.B) / static_cast<double>(data.size());
    r.train_loss = numkernel::loss_at(cfg.arch, snap.weight, full);
    r.eval_accuracy = numkernel::accuracy(cfg.arch, snap.weight, data);
    r.wall_time_s = keep_wall ? snap.wall : 0.0;
    r.sim_time = sim_time_at(cfg, r.iteration);
    r.pushes = static_cast<std::uint64_t>(std::lower_bound(push_tags.begin(), push_tags.end(), r.iteration) -
                                          push_tags.begin());
    r.pulls = static_cast<std::uint64_t>(std::lower_bound(pull_tags.begin(), pull_tags.end(), r.iteration) -
                                         pull_tags.begin());
    out.push_back(r);
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Deterministic cluster

/// All workers and servers on one thread, advanced one iteration (round) at
/// a time. Within a round every worker computes its gradient and local
/// update, then the rounds' messages are delivered in an order drawn from
/// the scheduler seed, keeping each worker's own messages in order. Replies
/// are delivered as soon as they are produced.
class Cluster {
 public:
  Cluster(RuntimeConfig cfg, const numkernel::Dataset& data)
      : cfg_(std::move(cfg)), data_(&data),
        snaps_(cfg_.arch, detail::snapshot_every(cfg_), detail::final_version(cfg_)) {
    validate(cfg_);
    if (data.dim() != cfg_.arch.input_dim)
      throw ConfigError("data.dim", "dataset dimension does not match the model input");
    const auto w0 = detail::initial_weight(cfg_);
    servers_ = detail::make_servers(cfg_, w0, &snaps_);
    workers_ = detail::make_workers(cfg_, w0);
    batch_seed_ = derive_seed(cfg_.seed, seed_stream::kBatches);
    sched_seed_ = derive_seed(cfg_.seed, seed_stream::kScheduler);
    const std::size_t L = cfg_.arch.layers.size();
    send_time_.assign(L, 0.0);
    server_time_.assign(L, 0.0);
    recv_time_.assign(L, 0.0);
  }
  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  const RuntimeConfig& config() const { return cfg_; }
  std::uint64_t round() const { return round_; }
  const std::vector<WorkerReplica>& workers() const { return workers_; }
  std::vector<LogEntry> log() const { return log_.entries(); }
  const ParamShard& shard(std::uint32_t key) const {
    return servers_[server_for_key(key, cfg_.servers)].shard(key);
  }

  DenseVec global_weight() const {
    DenseVec w(cfg_.arch.param_count());
    for (std::uint32_t key = 0; key < cfg_.arch.layers.size(); ++key) {
      const auto& src = shard(key).weight();
      std::copy(src.begin(), src.end(), w.begin() + static_cast<std::ptrdiff_t>(cfg_.arch.layers[key].offset));
    }
    return w;
  }

  /// Runs the warm-up iterations that remain.
  void run_warmup() {
    while (round_ < cfg_.hp.wp) step();
  }

  /// One delay-stage iteration for every worker.
  void delay_step() {
    if (cfg_.strategy == Strategy::SsdSgd && round_ < cfg_.hp.wp)
      throw ProtocolError("delay step requested before warm-up completed");
    step();
  }

  void run(std::uint64_t rounds) {
    for (std::uint64_t i = 0; i < rounds; ++i) step();
  }

  void step() {
    const std::uint64_t num = round_;
    const auto plan = plan_step(cfg_.strategy, cfg_.hp, num);
    const std::size_t K = workers_.size();

    std::vector<std::vector<Message>> streams(K);
    for (auto& w : workers_) {
      auto t0 = clock();
      const auto g = worker_gradient(cfg_.arch, w.local_weight, *data_, cfg_.hp.B, cfg_.devices, batch_seed_, w.id, num);
      compute_time_ += since(t0);
      if (plan.local_update) {
        t0 = clock();
        apply_local_update(w, g, cfg_.hp);
        local_time_ += since(t0);
      }
      auto& s = streams[w.id];
      s = make_pushes(cfg_.arch, w.id, num, g);
      if (plan.pull) {
        auto reqs = make_pull_requests(cfg_.arch, w.id, num);
        s.insert(s.end(), reqs.begin(), reqs.end());
      }
    }

    std::vector<PullAssembler> pulls(K);
    if (plan.pull)
      for (std::size_t i = 0; i < K; ++i) pulls[i] = PullAssembler(&cfg_.arch, num);

    std::mt19937_64 rng(derive_seed(sched_seed_, num));
    std::vector<std::size_t> cursor(K, 0);
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < K; ++i)
      if (!streams[i].empty()) live.push_back(i);
    while (!live.empty()) {
      std::uniform_int_distribution<std::size_t> pick(0, live.size() - 1);
      const std::size_t slot = pick(rng);
      const std::size_t w = live[slot];
      deliver(streams[w][cursor[w]++], pulls);
      if (cursor[w] == streams[w].size()) live.erase(live.begin() + static_cast<std::ptrdiff_t>(slot));
    }

    for (auto& w : workers_) {
      if (plan.pull) {
        auto& asm_ = pulls[w.id];
        if (!asm_.complete())
          throw RuntimeFault("worker " + std::to_string(w.id) + " pull for iteration " + std::to_string(num) +
                             " was not answered");
        install_pull(w, asm_.take(), plan, num);
      }
      ++w.num;
    }
    ++round_;
    if (cfg_.instrument) ++instrumented_rounds_;
  }

  /// Per-phase wall-clock costs averaged over the rounds run so far.
  /// Forward is taken as a third of gradient time and backward as the rest,
  /// split across layers by parameter count.
  pipesim::TimingProfile measured_profile() const {
    if (!cfg_.instrument || instrumented_rounds_ == 0)
      throw RuntimeFault("measured_profile requires instrument=true and at least one round");
    const double n = static_cast<double>(instrumented_rounds_);
    const double K = static_cast<double>(workers_.size());
    const std::size_t L = cfg_.arch.layers.size();
    const double P = static_cast<double>(cfg_.arch.param_count());
    pipesim::TimingProfile p;
    const double compute = compute_time_ / (n * K);
    p.forward = compute / 3.0;
    for (std::size_t j = 0; j < L; ++j) {
      const double share = static_cast<double>(cfg_.arch.layers[j].length) / P;
      p.backward.push_back(2.0 * compute / 3.0 * share);
      p.send.push_back(send_time_[j] / (n * K));
      p.recv.push_back(recv_time_[j] / (n * K));
      p.sync.push_back(0.0);
      p.update.push_back(server_time_[j] / n);
      p.local_update.push_back(local_time_ / (n * K) * share);
    }
    return p;
  }

  /// Metric rows for every snapshot taken so far. Consumes the snapshots.
  std::vector<MetricRecord> take_records(bool keep_wall) {
    return detail::build_records(cfg_, *data_, snaps_.take(), log_.entries(), keep_wall);
  }

 private:
  using Clock = std::chrono::steady_clock;
  Clock::time_point clock() const { return cfg_.instrument ? Clock::now() : Clock::time_point{}; }
  double since(Clock::time_point t0) const {
    return cfg_.instrument ? std::chrono::duration<double>(Clock::now() - t0).count() : 0.0;
  }

  void deliver(const Message& m, std::vector<PullAssembler>& pulls) {
    auto t0 = clock();
    Message msg = m;
    if (cfg_.instrument && m.kind == MessageKind::Push) {
      // Serialization stands in for the network cost of a push.
      auto decoded = decode(encode(m));
      msg = std::move(decoded->first);
      send_time_[m.key] += since(t0);
      t0 = clock();
    }
    log_.record(msg);
    auto replies = servers_[server_for_key(msg.key, cfg_.servers)].handle(msg);
    if (msg.kind == MessageKind::Push) server_time_[msg.key] += since(t0);
    for (auto& r : replies) {
      log_.record(r);
      if (r.kind != MessageKind::PullResp) continue;
      auto t1 = clock();
      if (cfg_.instrument) r = std::move(decode(encode(r))->first);
      if (!pulls[r.worker_id].accept(r))
        throw ProtocolError("unexpected pull response for worker " + std::to_string(r.worker_id));
      recv_time_[r.key] += since(t1);
    }
  }

  RuntimeConfig cfg_;
  const numkernel::Dataset* data_;
  SnapshotStore snaps_;
  std::vector<Server> servers_;
  std::vector<WorkerReplica> workers_;
  MessageLog log_;
  std::uint64_t batch_seed_ = 0;
  std::uint64_t sched_seed_ = 0;
  std::uint64_t round_ = 0;
  std::uint64_t instrumented_rounds_ = 0;
  double compute_time_ = 0.0;
  double local_time_ = 0.0;
  std::vector<double> send_time_, server_time_, recv_time_;
};

// ---------------------------------------------------------------------------
// Threaded runtime

namespace detail {

/// One thread per worker and per server, connected by mailboxes. Servers
/// handle their messages one at a time. SSGD and SSD-SGD produce the same
/// global weights as the deterministic cluster because shards fold
/// gradients in worker order; ASGD depends on timing.
class ThreadedRun {
 public:
  ThreadedRun(const RuntimeConfig& cfg, const numkernel::Dataset& data)
      : cfg_(cfg), data_(data), snaps_(cfg.arch, snapshot_every(cfg), final_version(cfg)) {}
  ThreadedRun(const ThreadedRun&) = delete;
  ThreadedRun& operator=(const ThreadedRun&) = delete;

  RunResult run() {
    const auto w0 = initial_weight(cfg_);
    servers_ = make_servers(cfg_, w0, &snaps_);
    workers_ = make_workers(cfg_, w0);
    for (std::size_t s = 0; s < cfg_.servers; ++s) server_mb_.push_back(make_mailbox(cfg_.transport));
    for (std::size_t w = 0; w < workers_.size(); ++w) worker_mb_.push_back(make_mailbox(cfg_.transport));

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::thread> server_threads, worker_threads;
    for (std::size_t s = 0; s < cfg_.servers; ++s) server_threads.emplace_back([this, s] { guarded([&] { serve(s); }); });
    for (auto& w : workers_) worker_threads.emplace_back([this, &w] { guarded([&] { work(w); }); });
    for (auto& t : worker_threads) t.join();
    for (auto& mb : server_mb_) mb->close();
    for (auto& t : server_threads) t.join();
    for (auto& mb : worker_mb_) mb->close();
    if (error_) std::rethrow_exception(error_);

    RunResult res;
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    res.messages = log_.entries();
    res.records = build_records(cfg_, data_, snaps_.take(), res.messages, true);
    res.final_weight.assign(cfg_.arch.param_count(), 0.0);
    for (std::uint32_t key = 0; key < cfg_.arch.layers.size(); ++key) {
      const auto& src = servers_[server_for_key(key, cfg_.servers)].shard(key).weight();
      std::copy(src.begin(), src.end(),
                res.final_weight.begin() + static_cast<std::ptrdiff_t>(cfg_.arch.layers[key].offset));
    }
    return res;
  }

 private:
  template <typename F>
  void guarded(F&& f) {
    try {
      f();
    } catch (...) {
      {
        std::lock_guard lock(error_mu_);
        if (!error_) error_ = std::current_exception();
      }
      failed_ = true;
      for (auto& mb : server_mb_) mb->close();
      for (auto& mb : worker_mb_) mb->close();
    }
  }

  void send(Mailbox& mb, const Message& m) {
    const auto cost = cfg_.link.cost(encoded_size(m));
    if (cost.count() > 0) std::this_thread::sleep_for(cost);
    mb.send(m);
  }

  void serve(std::size_t s) {
    auto& server = servers_[s];
    for (;;) {
      auto in = server_mb_[s]->receive(std::chrono::milliseconds(50));
      if (in.status == Received::Status::Closed) return;
      if (in.status == Received::Status::Timeout) {
        if (failed_) return;
        continue;
      }
      log_.record(in.message);
      for (const auto& r : server.handle(in.message)) send(*worker_mb_[r.worker_id], r);
    }
  }

  // Applies any replies already queued for worker `w`.
  void drain(WorkerReplica& w, PullAssembler& pull) {
    for (;;) {
      auto in = worker_mb_[w.id]->receive(std::chrono::milliseconds(0));
      if (in.status != Received::Status::Ok) return;
      log_.record(in.message);
      pull.accept(in.message);
    }
  }

  // Blocks until `pull` completes, re-requesting missing keys on timeout.
  void await(WorkerReplica& w, PullAssembler& pull) {
    int attempts = 0;
    while (!pull.complete()) {
      auto in = worker_mb_[w.id]->receive(cfg_.pull_timeout);
      if (in.status == Received::Status::Ok) {
        log_.record(in.message);
        pull.accept(in.message);
        continue;
      }
      if (in.status == Received::Status::Closed || failed_)
        throw RuntimeFault("worker " + std::to_string(w.id) + ": connection closed while pulling");
      if (++attempts > cfg_.pull_retries)
        throw RuntimeFault("worker " + std::to_string(w.id) + ": pull for iteration " + std::to_string(pull.tag()) +
                           " timed out after " + std::to_string(cfg_.pull_retries) + " retries");
      for (auto key : pull.missing())
        send(*server_mb_[server_for_key(key, cfg_.servers)], {MessageKind::PullReq, key, w.id, pull.tag(), {}});
    }
  }

  void work(WorkerReplica& w) {
    const auto batch_seed = derive_seed(cfg_.seed, seed_stream::kBatches);
    PullAssembler in_flight;
    StepPlan in_flight_plan;
    for (std::uint64_t num = 0; num < cfg_.iterations; ++num) {
      if (failed_) return;
      const auto plan = plan_step(cfg_.strategy, cfg_.hp, num);
      const auto g = worker_gradient(cfg_.arch, w.local_weight, data_, cfg_.hp.B, cfg_.devices, batch_seed, w.id, num);
      if (plan.local_update) {
        if (in_flight.active()) {
          await(w, in_flight);
          install_pull(w, in_flight.take(), in_flight_plan, in_flight.tag());
          in_flight = {};
        }
        apply_local_update(w, g, cfg_.hp);
      }
      for (auto& m : make_pushes(cfg_.arch, w.id, num, g)) send(*server_mb_[server_for_key(m.key, cfg_.servers)], m);
      drain(w, in_flight);
      if (plan.pull) {
        in_flight = PullAssembler(&cfg_.arch, num);
        in_flight_plan = plan;
        for (auto& m : make_pull_requests(cfg_.arch, w.id, num))
          send(*server_mb_[server_for_key(m.key, cfg_.servers)], m);
        if (plan.blocking_pull) {
          await(w, in_flight);
          install_pull(w, in_flight.take(), plan, num);
          in_flight = {};
        }
      }
      ++w.num;
    }
    if (in_flight.active()) {
      await(w, in_flight);
      install_pull(w, in_flight.take(), in_flight_plan, in_flight.tag());
    }
  }

  const RuntimeConfig& cfg_;
  const numkernel::Dataset& data_;
  SnapshotStore snaps_;
  std::vector<Server> servers_;
  std::vector<WorkerReplica> workers_;
  std::vector<std::unique_ptr<Mailbox>> server_mb_, worker_mb_;
  MessageLog log_;
  std::atomic<bool> failed_{false};
  std::mutex error_mu_;
  std::exception_ptr error_;
};

}  // namespace detail

/// Runs `cfg.iterations` rounds and returns one record per evaluation
/// interval plus the final iteration.
inline RunResult run_training(const RuntimeConfig& cfg, const numkernel::Dataset& data) {
  validate(cfg);
  if (data.dim() != cfg.arch.input_dim)
    throw ConfigError("data.dim", "dataset dimension does not match the model input");
  if (!cfg.deterministic) return detail::ThreadedRun(cfg, data).run();
  const auto t0 = std::chrono::steady_clock::now();
  Cluster cluster(cfg, data);
  cluster.run(cfg.iterations);
  RunResult res;
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  res.final_weight = cluster.global_weight();
  res.messages = cluster.log();
  res.records = cluster.take_records(false);
  if (cfg.instrument) res.measured_profile = cluster.measured_profile();
  return res;
}

/// Asynchronous baseline: every push updates the global weight at once and
/// pulls never wait.
inline RunResult run_asgd(RuntimeConfig cfg, const numkernel::Dataset& data) {
  cfg.strategy = Strategy::Asgd;
  return run_training(cfg, data);
}

}  // namespace ssdsgd::ps
