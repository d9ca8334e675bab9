// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <queue>
#include <string>
#include <string_view>
#include <vector>

#include "ssdsgd/errors.hpp"

namespace ssdsgd::pipesim {

/// Per-layer costs of one training iteration, in abstract time units.
/// Index 0 is the input layer; backward runs from the last layer down to 0.
struct TimingProfile {
  double forward = 0.0;              // T_f
  std::vector<double> backward;      // h_b
  std::vector<double> send;          // h_s (push)
  std::vector<double> recv;          // h_r (pull)
  std::vector<double> sync;          // h_sync
  std::vector<double> update;        // h_up (server update)
  std::vector<double> local_update;  // h_loc

  std::size_t layers() const { return backward.size(); }

  double backward_total() const { return std::accumulate(backward.begin(), backward.end(), 0.0); }
  double send_total() const { return std::accumulate(send.begin(), send.end(), 0.0); }
  /// h_c for one layer: push + pull + sync wait + server update.
  double comm(std::size_t j) const { return send[j] + recv[j] + sync[j] + update[j]; }
  double comm_total() const {
    double s = 0.0;
    for (std::size_t j = 0; j < layers(); ++j) s += comm(j);
    return s;
  }
  double last_backward() const { return backward.back(); }
  double first_local_update() const { return local_update.front(); }

  /// Throws ConfigError unless every array has L >= 1 entries and all costs
  /// are finite and non-negative.
  void validate() const {
    const std::size_t L = backward.size();
    if (L == 0) throw ConfigError("profile.backward", "at least one layer required");
    auto check = [L](const std::vector<double>& v, const char* name) {
      if (v.size() != L)
        throw ConfigError(std::string("profile.") + name,
                          "expected " + std::to_string(L) + " entries, got " + std::to_string(v.size()));
      for (double x : v)
        if (!std::isfinite(x) || x < 0) throw ConfigError(std::string("profile.") + name, "costs must be finite and >= 0");
    };
    check(backward, "backward");
    check(send, "send");
    check(recv, "recv");
    check(sync, "sync");
    check(update, "update");
    check(local_update, "local_update");
    if (!std::isfinite(forward) || forward < 0) throw ConfigError("profile.forward", "must be finite and >= 0");
  }

  friend bool operator==(const TimingProfile&, const TimingProfile&) = default;
};

// ---------------------------------------------------------------------------
// Analytic model

enum class PipelineCase { Case1, Case2, Case3 };

inline std::string_view to_string(PipelineCase c) {
  switch (c) {
    case PipelineCase::Case1: return "case1";
    case PipelineCase::Case2: return "case2";
    case PipelineCase::Case3: return "case3";
  }
  return "?";
}

/// Classification plus the quantities that decided it.
struct CaseInfo {
  PipelineCase pipeline_case = PipelineCase::Case1;
  double send_total = 0.0;     // sum of h_s
  double compute_period = 0.0; // T_f + T_b + h_loc[0]
  /// Bracketed 1/k coefficient of the case's formula; positive means a
  /// larger k helps.
  double k_gain = 0.0;
};

/// Case2 when the pushes alone outlast compute plus the first local update,
/// otherwise Case1. Case3 when no applicable case has a positive 1/k coefficient:
/// the iteration after a pull then finishes computing after the
/// pull lands and k no longer matters.
inline CaseInfo classify(const TimingProfile& p) {
  CaseInfo info;
  info.send_total = p.send_total();
  info.compute_period = p.forward + p.backward_total() + p.first_local_update();
  const double Tc = p.comm_total();
  const double Tb = p.backward_total();
  const double gain2 = Tc + p.last_backward() - Tb - info.send_total;
  const double gain1 = Tc + p.last_backward() - p.forward - 2 * Tb - p.first_local_update();
  if (info.send_total >= info.compute_period && gain2 > 0) {
    info.pipeline_case = PipelineCase::Case2;
    info.k_gain = gain2;
  } else if (gain1 > 0) {
    info.pipeline_case = PipelineCase::Case1;
    info.k_gain = gain1;
  } else {
    info.pipeline_case = PipelineCase::Case3;
    info.k_gain = 0.0;
  }
  return info;
}

/// SSGD iteration time: compute-bound when the backward pass of layers
/// 0..L-2 outlasts the communication of layers 1..L-1, comm-bound otherwise.
inline double ssgd_iter_time(const TimingProfile& p) {
  const std::size_t L = p.layers();
  double bwd_front = 0.0;
  for (std::size_t j = 0; j + 1 < L; ++j) bwd_front += p.backward[j];
  double comm_back = 0.0;
  for (std::size_t j = 1; j < L; ++j) comm_back += p.comm(j);
  if (bwd_front > comm_back) return p.forward + p.backward_total() + p.comm(0);
  return p.forward + p.comm_total() + p.last_backward();
}

struct AvgIterTime {
  double value = 0.0;
  PipelineCase pipeline_case = PipelineCase::Case1;
};

/// Average iteration time over k iterations when weights are pulled once
/// every k iterations.
inline AvgIterTime ssd_avg_iter_time(const TimingProfile& p, std::uint32_t k) {
  if (k < 1) throw ConfigError("k", "must be >= 1");
  const CaseInfo info = classify(p);
  const double Tf = p.forward, Tb = p.backward_total(), Tc = p.comm_total();
  const double hbL = p.last_backward(), hloc1 = p.first_local_update();
  const double inv_k = 1.0 / static_cast<double>(k);
  switch (info.pipeline_case) {
    case PipelineCase::Case1:
      return {Tf + Tb + hloc1 + inv_k * (Tc + hbL - Tf - 2 * Tb - hloc1), PipelineCase::Case1};
    case PipelineCase::Case2:
      return {info.send_total + inv_k * (Tc + hbL - Tb - info.send_total), PipelineCase::Case2};
    case PipelineCase::Case3:
      break;
  }
  return {std::max(info.compute_period, info.send_total), PipelineCase::Case3};
}

/// Time saved over k iterations relative to SSGD. The Case2 form assumes
/// sum(h_s) = T_c / 2.
inline double delta_T_k(const TimingProfile& p, std::uint32_t k, PipelineCase which) {
  if (k < 1) throw ConfigError("k", "must be >= 1");
  const double kk = static_cast<double>(k);
  const double Tf = p.forward, Tb = p.backward_total(), Tc = p.comm_total();
  const double hbL = p.last_backward(), hloc1 = p.first_local_update();
  if (which == PipelineCase::Case2) return kk * Tf + (kk - 1) / 2 * Tc + (kk - 1) * hbL + Tb;
  if (which == PipelineCase::Case1) return (kk - 1) * (Tc - Tb + hbL - hloc1) + (Tf + Tb);
  throw ConfigError("case", "delta_T_k is defined for Case1 and Case2 only");
}

// ---------------------------------------------------------------------------
// Discrete-event simulation

enum class Strategy { Ssgd, SsdSgd };

/// When the iteration that follows a pull may start its computation.
enum class PostPullRelease {
  /// Right-aligned so its backward pass ends when the pull lands. This is
  /// the schedule the analytic model describes.
  AlignToPull,
  /// As soon as its inputs allow.
  Eager,
};

struct TraceEvent {
  double time = 0.0;
  std::string resource;  // compute | send | server | recv | updater
  std::string event;     // <op>_begin / <op>_end
  int layer = -1;        // -1 for whole-iteration events
  std::uint64_t iteration = 0;
};

struct SimOptions {
  PostPullRelease release = PostPullRelease::AlignToPull;
  bool record_trace = false;
};

struct SimResult {
  /// Steady-state average time between iteration starts.
  double avg_iter_time = 0.0;
  /// Release time of every iteration, plus one trailing entry for the
  /// iteration that would follow the last.
  std::vector<double> iteration_starts;
  /// Channel idle gaps inside a round-trip chain, charged to the layer
  /// transmitted just before the gap (added to its sync cost).
  TimingProfile effective;
  std::vector<TraceEvent> trace;  // sorted by time
};

namespace detail {

class TraceSink {
 public:
  explicit TraceSink(bool enabled) : enabled_(enabled) {}
  void span(double begin, double end, const char* resource, const char* op, int layer, std::uint64_t it) {
    if (!enabled_) return;
    push({begin, resource, std::string(op) + "_begin", layer, it});
    push({end, resource, std::string(op) + "_end", layer, it});
  }
  std::vector<TraceEvent> drain() {
    std::vector<TraceEvent> out;
    out.reserve(queue_.size());
    while (!queue_.empty()) {
      out.push_back(queue_.top().ev);
      queue_.pop();
    }
    return out;
  }

 private:
  struct Entry {
    TraceEvent ev;
    std::uint64_t seq;
    bool operator>(const Entry& o) const { return ev.time != o.ev.time ? ev.time > o.ev.time : seq > o.seq; }
  };
  void push(TraceEvent ev) { queue_.push({std::move(ev), seq_++}); }
  bool enabled_;
  std::uint64_t seq_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
};

}  // namespace detail

/// Simulates `n_iters` iterations of one worker's compute/communicate
/// pipeline.
///
/// Resources: the compute engine runs forward then backward layer by layer
/// (last layer first); a finished layer releases its communication. An
/// iteration that pulls runs, per layer, a round trip of push, server sync
/// and update, and pull; the round trips of consecutive layers are
/// serialized. Other iterations only push, on the send channel, in backward
/// order. Local updates run on a separate updater, per layer, once the
/// layer's gradient exists and, after a pull, once that layer's weights
/// have arrived; they overlap with pushes.
///
/// Iteration i+1 starts when the compute engine is free and:
///  - SSGD: every pull of iteration i has landed;
///  - SSD-SGD: every local update of iteration i is done, and its first push
///    would find the send channel free (at most one iteration of gradients
///    queued). After a pull, see PostPullRelease.
inline SimResult simulate_pipeline(const TimingProfile& p, Strategy strategy, std::uint32_t k, std::uint64_t n_iters,
                                   SimOptions opts = {}) {
  p.validate();
  if (k < 1) throw ConfigError("k", "must be >= 1");
  if (n_iters < k) throw ConfigError("n_iters", "must be >= k");
  const bool ssgd = strategy == Strategy::Ssgd;
  const std::size_t L = p.layers();
  const std::size_t last = L - 1;
  const double Tf = p.forward, Tb = p.backward_total();

  SimResult res;
  res.effective = p;
  bool effective_done = false;
  detail::TraceSink trace(opts.record_trace);

  double cpu_free = 0.0, send_free = 0.0, upd_free = 0.0;
  double prev_local_done = 0.0;
  double prev_pull_done = 0.0;
  bool prev_pulled = false;
  std::vector<double> prev_arrival(L, 0.0), arrival(L, 0.0), bwd_end(L, 0.0);

  auto release_time = [&](std::uint64_t i) {
    double f = cpu_free;
    if (i == 0) return f;
    if (ssgd) return std::max(f, prev_pull_done);
    f = std::max(f, prev_local_done);
    f = std::max(f, send_free - Tf - p.backward[last]);
    if (prev_pulled && opts.release == PostPullRelease::AlignToPull) f = std::max(f, prev_pull_done - Tf - Tb);
    return f;
  };

  for (std::uint64_t i = 0; i < n_iters; ++i) {
    const bool pull = ssgd || i % k == k - 1;
    const double start = release_time(i);
    res.iteration_starts.push_back(start);

    double t = start + Tf;
    trace.span(start, t, "compute", "forward", -1, i);
    for (std::size_t j = L; j-- > 0;) {
      const double b = t;
      t += p.backward[j];
      bwd_end[j] = t;
      trace.span(b, t, "compute", "backward", static_cast<int>(j), i);
    }
    cpu_free = t;

    if (pull) {
      double chain = -std::numeric_limits<double>::infinity();
      for (std::size_t j = L; j-- > 0;) {
        double s = std::max(bwd_end[j], chain);
        if (!effective_done && j < last && s > chain) res.effective.sync[j + 1] += s - chain;
        const double a = s + p.send[j];
        const double b = a + p.sync[j];
        const double c = b + p.update[j];
        const double d = c + p.recv[j];
        trace.span(s, a, "send", "push", static_cast<int>(j), i);
        trace.span(a, b, "server", "sync", static_cast<int>(j), i);
        trace.span(b, c, "server", "update", static_cast<int>(j), i);
        trace.span(c, d, "recv", "pull", static_cast<int>(j), i);
        arrival[j] = d;
        chain = d;
      }
      effective_done = true;
    } else {
      for (std::size_t j = L; j-- > 0;) {
        const double s = std::max(bwd_end[j], send_free);
        send_free = s + p.send[j];
        trace.span(s, send_free, "send", "push", static_cast<int>(j), i);
      }
    }

    if (!ssgd) {
      for (std::size_t j = L; j-- > 0;) {
        double s = std::max(bwd_end[j], upd_free);
        if (prev_pulled) s = std::max(s, prev_arrival[j]);
        upd_free = s + p.local_update[j];
        trace.span(s, upd_free, "updater", "local_update", static_cast<int>(j), i);
      }
      prev_local_done = upd_free;
    }

    prev_pulled = pull;
    if (pull) {
      prev_arrival = arrival;
      prev_pull_done = *std::max_element(arrival.begin(), arrival.end());
    }
  }
  res.iteration_starts.push_back(release_time(n_iters));

  // Steady state: whole k-cycles, skipping the first two.
  const std::uint64_t n = n_iters;
  const std::uint64_t period = ssgd ? 1 : k;
  std::uint64_t skip = 2 * period;
  if (n < skip + period) skip = 0;
  const std::uint64_t cycles = (n - skip) / period;
  const std::uint64_t span_iters = cycles * period;
  res.avg_iter_time = (res.iteration_starts[skip + span_iters] - res.iteration_starts[skip]) /
                      static_cast<double>(span_iters);
  res.trace = trace.drain();
  return res;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceEvent>& trace) {
  os << "time,resource,event,layer,iteration\n";
  const auto old_precision = os.precision(17);
  for (const auto& e : trace)
    os << e.time << ',' << e.resource << ',' << e.event << ',' << e.layer << ',' << e.iteration << '\n';
  os.precision(old_precision);
}

// ---------------------------------------------------------------------------
// Timing study

struct TimingRow {
  std::uint32_t k = 1;
  double analytic = 0.0;   // average iteration time, closed form
  double simulated = 0.0;  // average iteration time, simulation
  double speedup = 1.0;    // simulated SSGD time / simulated SSD-SGD time
  PipelineCase pipeline_case = PipelineCase::Case1;
};

struct TimingStudy {
  double ssgd_analytic = 0.0;
  double ssgd_simulated = 0.0;
  std::vector<TimingRow> rows;
};

inline TimingStudy run_timing_study(const TimingProfile& p, std::uint32_t k_min, std::uint32_t k_max,
                                    std::uint64_t cycles = 20) {
  p.validate();
  if (k_min < 1 || k_max < k_min) throw ConfigError("sweep-k", "expected 1 <= a <= b");
  TimingStudy study;
  study.ssgd_analytic = ssgd_iter_time(p);
  study.ssgd_simulated = simulate_pipeline(p, Strategy::Ssgd, 1, 3 + cycles).avg_iter_time;
  for (std::uint32_t k = k_min; k <= k_max; ++k) {
    TimingRow row;
    row.k = k;
    const auto a = ssd_avg_iter_time(p, k);
    row.analytic = a.value;
    row.pipeline_case = a.pipeline_case;
    row.simulated = simulate_pipeline(p, Strategy::SsdSgd, k, k * (cycles + 3)).avg_iter_time;
    row.speedup = row.simulated > 0 ? study.ssgd_simulated / row.simulated : 1.0;
    study.rows.push_back(row);
  }
  return study;
}

}  // namespace ssdsgd::pipesim
