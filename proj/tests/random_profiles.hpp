// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

// Random timing profiles for the pipeline tests.
//
// Profiles drawn for a target case keep every channel busy without gaps:
//  - comm(j+1) >= backward(j), so each layer's round trip can start as soon
//    as the previous one ends;
//  - local_update(j) <= min(backward(j-1), comm(j-1)), so local updates hide
//    behind the preceding layer;
//  - Case2: send(j+1) >= backward(j), so pushes run back to back;
//  - Case1: an iteration's pushes finish before the next iteration's first
//    push.
// The closed forms are exact on that family.

#include <random>
#include <stdexcept>

#include "ssdsgd/pipesim.hpp"

namespace testutil {

using ssdsgd::pipesim::PipelineCase;
using ssdsgd::pipesim::TimingProfile;

inline double uniform(std::mt19937_64& rng, double a, double b) {
  return std::uniform_real_distribution<double>(a, b)(rng);
}

/// Splits comm cost `c` into send/recv/sync/update with send share `fs`.
inline void split_comm(std::mt19937_64& rng, TimingProfile& p, double c, double fs) {
  const double a = uniform(rng, 0.1, 1), b = uniform(rng, 0.1, 1), d = uniform(rng, 0.1, 1);
  const double rest = c * (1 - fs), sum = a + b + d;
  p.send.push_back(c * fs);
  p.recv.push_back(rest * a / sum);
  p.sync.push_back(rest * b / sum);
  p.update.push_back(rest * d / sum);
}

/// Bubble-free profile; `send_share` range steers between Case1 and Case2.
inline TimingProfile draw_bubble_free(std::mt19937_64& rng, double fs_lo, double fs_hi, double comm_scale) {
  TimingProfile p;
  const auto L = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
  p.forward = uniform(rng, 0.2, 2.0);
  for (std::size_t j = 0; j < L; ++j) p.backward.push_back(uniform(rng, 0.1, 1.5));
  std::vector<double> comm(L);
  comm[0] = uniform(rng, 0.1, 2.0) * comm_scale;
  for (std::size_t j = 1; j < L; ++j) comm[j] = p.backward[j - 1] + uniform(rng, 0.0, 1.0) * comm_scale;
  for (std::size_t j = 0; j < L; ++j) split_comm(rng, p, comm[j], uniform(rng, fs_lo, fs_hi));
  p.local_update.push_back(uniform(rng, 0.0, 0.5));
  for (std::size_t j = 1; j < L; ++j)
    p.local_update.push_back(uniform(rng, 0.0, 1.0) * std::min(p.backward[j - 1], comm[j - 1]));
  return p;
}

/// True when the pushes of an iteration end before the next iteration,
/// started one compute period later, issues its first push.
inline bool pushes_fit(const TimingProfile& p) {
  const std::size_t L = p.layers();
  const double period = p.forward + p.backward_total() + p.first_local_update();
  double end = 0.0, bwd = p.forward;
  for (std::size_t j = L; j-- > 0;) {
    bwd += p.backward[j];
    end = std::max(end, bwd) + p.send[j];
  }
  return end <= period + p.forward + p.last_backward();
}

/// Rejection-samples a gap-free profile classified as `target`
/// (Case1 or Case2).
inline TimingProfile draw_case(std::mt19937_64& rng, PipelineCase target) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    TimingProfile p = target == PipelineCase::Case2 ? draw_bubble_free(rng, 0.55, 0.9, uniform(rng, 1.5, 4.0))
                                                    : draw_bubble_free(rng, 0.05, 0.4, uniform(rng, 1.0, 3.0));
    if (target == PipelineCase::Case2)
      for (std::size_t j = 0; j + 1 < p.layers(); ++j) p.send[j + 1] = std::max(p.send[j + 1], p.backward[j]);
    if (target == PipelineCase::Case1 && !pushes_fit(p)) continue;
    if (ssdsgd::pipesim::classify(p).pipeline_case == target) return p;
  }
  throw std::runtime_error("could not draw a profile for the requested case");
}

/// Any valid profile: arbitrary costs, bubbles allowed.
inline TimingProfile draw_any(std::mt19937_64& rng) {
  TimingProfile p;
  const auto L = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
  p.forward = uniform(rng, 0.0, 2.0);
  for (std::size_t j = 0; j < L; ++j) {
    p.backward.push_back(uniform(rng, 0.0, 2.0));
    p.send.push_back(uniform(rng, 0.0, 2.0));
    p.recv.push_back(uniform(rng, 0.0, 2.0));
    p.sync.push_back(uniform(rng, 0.0, 0.5));
    p.update.push_back(uniform(rng, 0.0, 0.5));
    p.local_update.push_back(uniform(rng, 0.0, 0.5));
  }
  return p;
}

/// Profile whose SSGD round trips never wait on the backward pass
/// (comm(j+1) >= backward(j)) or never wait on each other
/// (comm(j+1) <= backward(j)); the SSGD closed form is exact on both.
inline TimingProfile draw_ssgd_exact(std::mt19937_64& rng) {
  TimingProfile p = draw_any(rng);
  const bool comm_bound = std::bernoulli_distribution(0.5)(rng);
  for (std::size_t j = 0; j + 1 < p.layers(); ++j) {
    const double c = p.comm(j + 1), b = p.backward[j];
    if (comm_bound && c < b) p.send[j + 1] += b - c;
    if (!comm_bound && c > b) p.backward[j] = c;
  }
  return p;
}

/// Comm-bound SSGD profile (sum of backward(0..L-2) <= sum of comm(1..L-1))
/// with total send equal to half of the total communication cost, classified
/// as Case1 or Case2.
inline TimingProfile draw_half_send(std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    TimingProfile p;
    const auto L = std::uniform_int_distribution<std::size_t>(1, 6)(rng);
    p.forward = uniform(rng, 0.2, 2.0);
    for (std::size_t j = 0; j < L; ++j) {
      p.backward.push_back(uniform(rng, 0.1, 1.0));
      const double r = uniform(rng, 0.2, 3.0), s = uniform(rng, 0.0, 0.5), u = uniform(rng, 0.0, 0.5);
      p.recv.push_back(r);
      p.sync.push_back(s);
      p.update.push_back(u);
      p.send.push_back(r + s + u);
      p.local_update.push_back(uniform(rng, 0.0, 0.5));
    }
    double front = 0, back = 0;
    for (std::size_t j = 0; j + 1 < L; ++j) front += p.backward[j];
    for (std::size_t j = 1; j < L; ++j) back += p.comm(j);
    if (front > back) continue;
    if (ssdsgd::pipesim::classify(p).pipeline_case == PipelineCase::Case3) continue;
    return p;
  }
  throw std::runtime_error("could not draw a half-send profile");
}

}  // namespace testutil
