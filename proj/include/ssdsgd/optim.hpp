// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/numkernel.hpp"

namespace ssdsgd::optim {

/// Training hyperparameters shared by servers and workers.
///
/// All update rules in this namespace are written as descent steps: the
/// gradients passed in are raw loss gradients and the rules subtract them.
struct HyperParams {
  double lr = 0.1;        // global learning rate (servers)
  double loc_lr = 0.4;    // local learning rate (workers)
  double alpha = 2.0;     // local-gradient coefficient
  double beta = 0.5;      // inferred-global-gradient coefficient
  double wd = 0.0;        // weight decay
  double m = 0.9;         // server momentum coefficient
  std::uint32_t k = 1;    // delay steps between pulls
  std::uint64_t wp = 0;   // warm-up iterations
  std::size_t B = 32;     // per-worker batch size
  std::size_t K = 1;      // worker count
};

struct FieldIssue {
  std::string field;
  std::string message;
};

/// Every invariant violation in `hp`, one entry per field.
inline std::vector<FieldIssue> check(const HyperParams& hp) {
  std::vector<FieldIssue> out;
  auto finite = [](double v) { return std::isfinite(v); };
  if (!finite(hp.lr) || hp.lr <= 0) out.push_back({"optim.lr", "must be > 0"});
  if (!finite(hp.loc_lr) || hp.loc_lr <= 0) out.push_back({"optim.loc_lr", "must be > 0"});
  if (!finite(hp.alpha) || hp.alpha < 0) out.push_back({"optim.alpha", "must be >= 0"});
  if (!finite(hp.beta) || hp.beta < 0) out.push_back({"optim.beta", "must be >= 0"});
  if (!finite(hp.wd) || hp.wd < 0) out.push_back({"optim.wd", "must be >= 0"});
  if (!finite(hp.m) || hp.m < 0 || hp.m >= 1) out.push_back({"optim.momentum", "must satisfy 0 <= m < 1"});
  if (hp.k < 1) out.push_back({"optim.k", "must be >= 1"});
  if (hp.B < 1) out.push_back({"optim.batch_size", "must be >= 1"});
  if (hp.K < 1) out.push_back({"cluster.workers", "must be >= 1"});
  if (hp.k >= 1 && (1 + hp.wp) % hp.k != 0)
    out.push_back({"optim.warmup", "(1 + warmup) mod k must be 0 (warmup=" + std::to_string(hp.wp) +
                                       ", k=" + std::to_string(hp.k) + ")"});
  return out;
}

/// Throws ConfigError for the first violated invariant.
inline void validate(const HyperParams& hp) {
  const auto issues = check(hp);
  if (!issues.empty()) throw ConfigError(issues.front().field, issues.front().message);
}

struct ServerOptState {
  DenseVec momentum;

  ServerOptState() = default;
  explicit ServerOptState(std::size_t n) : momentum(n, 0.0) {}
};

struct GluState {
  DenseVec pre_weight;          // last pulled global weight; empty until first local update
  std::uint64_t loc_update = 0; // local updates performed so far

  bool primed() const { return !pre_weight.empty(); }
};

namespace detail {
inline void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ProtocolError(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) +
                        ")");
}
}  // namespace detail

/// Momentum SGD on the server:
///   mom <- m*mom - lr*(grad_avg + wd*w);  w <- w + mom
inline void server_momentum_update(std::span<double> w, std::span<const double> grad_avg, ServerOptState& state,
                                   const HyperParams& hp) {
  detail::require_same_length(w.size(), grad_avg.size(), "server_momentum_update");
  detail::require_same_length(w.size(), state.momentum.size(), "server_momentum_update state");
  for (std::size_t i = 0; i < w.size(); ++i) {
    state.momentum[i] = hp.m * state.momentum[i] - hp.lr * (grad_avg[i] + hp.wd * w[i]);
    w[i] = w[i] + state.momentum[i];
  }
}

/// Global gradient inferred from weight displacement over k server steps:
///   (pre_weight - w_current) * (1 - m) / (lr * k)
/// Exact for a constant gradient once momentum has saturated.
inline DenseVec glu_grad_sync(std::span<const double> w_current, const GluState& state, const HyperParams& hp) {
  if (!state.primed()) throw ProtocolError("glu_grad_sync: pre_weight not initialized");
  detail::require_same_length(w_current.size(), state.pre_weight.size(), "glu_grad_sync");
  const double scale = (1.0 - hp.m) / (hp.lr * static_cast<double>(hp.k));
  DenseVec g(w_current.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = (state.pre_weight[i] - w_current[i]) * scale;
  return g;
}

/// One GLU local step. Order: infer grad_sync, refresh pre_weight on the
/// k-boundary, then
///   w <- w - loc_lr*(alpha*grad + wd*w + beta*grad_sync).
/// The first call seeds pre_weight with `w_local`.
inline void glu_local_update(std::span<double> w_local, std::span<const double> grad_local, GluState& state,
                             const HyperParams& hp) {
  detail::require_same_length(w_local.size(), grad_local.size(), "glu_local_update");
  if (!state.primed()) state.pre_weight.assign(w_local.begin(), w_local.end());
  const DenseVec g_sync = glu_grad_sync(w_local, state, hp);
  if (state.loc_update > 0 && state.loc_update % hp.k == 0)
    state.pre_weight.assign(w_local.begin(), w_local.end());
  for (std::size_t i = 0; i < w_local.size(); ++i)
    w_local[i] = w_local[i] - hp.loc_lr * (hp.alpha * grad_local[i] + hp.wd * w_local[i] + hp.beta * g_sync[i]);
  ++state.loc_update;
}

/// Plain local SGD: w <- w - loc_lr*grad.
inline void local_sgd_update(std::span<double> w_local, std::span<const double> grad_local, const HyperParams& hp) {
  detail::require_same_length(w_local.size(), grad_local.size(), "local_sgd_update");
  for (std::size_t i = 0; i < w_local.size(); ++i)
    w_local[i] = w_local[i] - hp.loc_lr * (grad_local[i]);
}

}  // namespace ssdsgd::optim
