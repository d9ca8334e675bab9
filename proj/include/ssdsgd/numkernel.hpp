// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssdsgd/errors.hpp"

namespace ssdsgd {

using DenseVec = std::vector<double>;

/// Row-major matrix of doubles.
struct DenseMat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  DenseMat() = default;
  DenseMat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
  std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  friend bool operator==(const DenseMat&, const DenseMat&) = default;
};

// ---------------------------------------------------------------------------
// Seeds

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed derived from a master seed. Changing `stream`
/// changes only the consumer that owns that stream.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  return splitmix64(master ^ splitmix64(stream));
}

namespace numkernel {

// ---------------------------------------------------------------------------
// Models

enum class ModelKind { LinearRegression, LogisticRegression, Mlp2 };

inline std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::LinearRegression: return "linear-regression";
    case ModelKind::LogisticRegression: return "logistic-regression";
    case ModelKind::Mlp2: return "mlp-2layer";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "linear-regression") return ModelKind::LinearRegression;
  if (s == "logistic-regression") return ModelKind::LogisticRegression;
  if (s == "mlp-2layer") return ModelKind::Mlp2;
  throw ConfigError("model.kind", "unknown model kind '" + std::string(s) + "'");
}

/// A named slice of the flat parameter vector. One slice per layer key.
struct LayerSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;

  friend bool operator==(const LayerSlice&, const LayerSlice&) = default;
};

/// Shape of a model: everything except the parameter values.
struct Architecture {
  ModelKind kind = ModelKind::LogisticRegression;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;  // mlp-2layer only
  std::vector<LayerSlice> layers;

  std::size_t param_count() const {
    return layers.empty() ? 0 : layers.back().offset + layers.back().length;
  }
  bool is_classifier() const { return kind != ModelKind::LinearRegression; }
};

inline Architecture make_architecture(ModelKind kind, std::size_t input_dim, std::size_t hidden = 16) {
  if (input_dim == 0) throw ConfigError("model.input_dim", "must be positive");
  Architecture a;
  a.kind = kind;
  a.input_dim = input_dim;
  auto add = [&a](std::string name, std::size_t len) {
    const std::size_t off = a.param_count();
    a.layers.push_back({std::move(name), off, len});
  };
  if (kind == ModelKind::Mlp2) {
    if (hidden == 0) throw ConfigError("model.hidden", "must be positive");
    a.hidden = hidden;
    add("hidden.weight", hidden * input_dim);
    add("hidden.bias", hidden);
    add("output.weight", hidden);
    add("output.bias", 1);
  } else {
    add("weight", input_dim);
    add("bias", 1);
  }
  return a;
}

struct Model {
  Architecture arch;
  DenseVec params;
};

/// Zero-initialized model.
inline Model make_model(ModelKind kind, std::size_t input_dim, std::size_t hidden = 16) {
  Model m{make_architecture(kind, input_dim, hidden), {}};
  m.params.assign(m.arch.param_count(), 0.0);
  return m;
}

/// Small Gaussian initialization. Deterministic in `seed`.
inline void init_params(Model& m, std::uint64_t seed, double scale = 0.1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, scale);
  for (double& p : m.params) p = dist(rng);
}

struct Minibatch {
  DenseMat features;  // B x d
  DenseVec labels;    // B

  std::size_t size() const { return features.rows; }
};

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(z)) without overflow.
inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

inline void check_shapes(const Architecture& arch, std::span<const double> params, const Minibatch& b) {
  if (params.size() != arch.param_count())
    throw ConfigError("model.params", "expected " + std::to_string(arch.param_count()) + " parameters, got " +
                                          std::to_string(params.size()));
  if (b.features.cols != arch.input_dim)
    throw ConfigError("batch.features", "feature dimension " + std::to_string(b.features.cols) +
                                            " does not match model input dimension " + std::to_string(arch.input_dim));
  if (b.labels.size() != b.features.rows)
    throw ConfigError("batch.labels", "label count does not match batch rows");
  if (b.features.rows == 0) throw ConfigError("batch.features", "empty batch");
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Hidden activations of the mlp for one sample.
inline void mlp_hidden(const Architecture& arch, std::span<const double> p, std::span<const double> x,
                       std::span<double> act) {
  const std::size_t d = arch.input_dim;
  const auto w1 = p.subspan(arch.layers[0].offset, arch.layers[0].length);
  const auto b1 = p.subspan(arch.layers[1].offset, arch.layers[1].length);
  for (std::size_t h = 0; h < arch.hidden; ++h) act[h] = std::tanh(dot(w1.subspan(h * d, d), x) + b1[h]);
}

inline double mlp_logit(const Architecture& arch, std::span<const double> p, std::span<const double> act) {
  const auto w2 = p.subspan(arch.layers[2].offset, arch.layers[2].length);
  return dot(w2, act) + p[arch.layers[3].offset];
}

}  // namespace detail

/// Model output for one sample: the regression prediction, or the logit for
/// classifiers.
inline double predict(const Architecture& arch, std::span<const double> params, std::span<const double> x) {
  if (arch.kind == ModelKind::Mlp2) {
    std::vector<double> act(arch.hidden);
    detail::mlp_hidden(arch, params, x, act);
    return detail::mlp_logit(arch, params, act);
  }
  return detail::dot(params.first(arch.input_dim), x) + params[arch.input_dim];
}

/// Mean loss over the batch: half squared error for linear regression,
/// binary cross-entropy on {0,1} labels for the classifiers.
inline double loss_at(const Architecture& arch, std::span<const double> params, const Minibatch& batch) {
  detail::check_shapes(arch, params, batch);
  const std::size_t n = batch.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double out = predict(arch, params, batch.features.row(i));
    const double y = batch.labels[i];
    if (arch.kind == ModelKind::LinearRegression) {
      const double r = out - y;
      total += 0.5 * r * r;
    } else {
      total += detail::softplus(out) - y * out;
    }
  }
  return total / static_cast<double>(n);
}

/// Raw (ascent-direction) gradient of the mean batch loss, written to `out`.
inline void grad_at(const Architecture& arch, std::span<const double> params, const Minibatch& batch,
                    std::span<double> out) {
  detail::check_shapes(arch, params, batch);
  if (out.size() != params.size()) throw ConfigError("grad", "output length mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t n = batch.size();
  const std::size_t d = arch.input_dim;
  const double inv_n = 1.0 / static_cast<double>(n);

  if (arch.kind != ModelKind::Mlp2) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = batch.features.row(i);
      const double out_i = detail::dot(params.first(d), x) + params[d];
      const double residual =
          arch.kind == ModelKind::LinearRegression ? out_i - batch.labels[i] : detail::sigmoid(out_i) - batch.labels[i];
      for (std::size_t j = 0; j < d; ++j) out[j] += residual * x[j];
      out[d] += residual;
    }
  } else {
    const std::size_t hdim = arch.hidden;
    const auto& L = arch.layers;
    std::vector<double> act(hdim);
    for (std::size_t i = 0; i < n; ++i) {
      const auto x = batch.features.row(i);
      detail::mlp_hidden(arch, params, x, act);
      const double dz = detail::sigmoid(detail::mlp_logit(arch, params, act)) - batch.labels[i];
      const auto w2 = params.subspan(L[2].offset, L[2].length);
      for (std::size_t h = 0; h < hdim; ++h) {
        out[L[2].offset + h] += dz * act[h];
        const double dpre = dz * w2[h] * (1.0 - act[h] * act[h]);
        out[L[1].offset + h] += dpre;
        double* gw1 = out.data() + L[0].offset + h * d;
        for (std::size_t j = 0; j < d; ++j) gw1[j] += dpre * x[j];
      }
      out[L[3].offset] += dz;
    }
  }
  for (double& g : out) g *= inv_n;
}

inline double forward_loss(const Model& model, const Minibatch& batch) {
  return loss_at(model.arch, model.params, batch);
}

inline DenseVec backward_grad(const Model& model, const Minibatch& batch) {
  DenseVec g(model.params.size());
  grad_at(model.arch, model.params, batch, g);
  return g;
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class DatasetKind { Regression, Classification };

inline std::string_view to_string(DatasetKind k) {
  return k == DatasetKind::Regression ? "regression" : "classification";
}

inline DatasetKind parse_dataset_kind(std::string_view s) {
  if (s == "regression") return DatasetKind::Regression;
  if (s == "classification") return DatasetKind::Classification;
  throw ConfigError("data.kind", "unknown dataset kind '" + std::string(s) + "'");
}

struct DatasetSpec {
  DatasetKind kind = DatasetKind::Classification;
  std::size_t n_samples = 4096;
  std::size_t dim = 32;
  std::uint64_t seed = 0;
  /// Label flip probability (classification) or residual std-dev (regression).
  double noise = 0.05;
};

struct Dataset {
  DatasetKind kind = DatasetKind::Classification;
  DenseMat features;
  DenseVec labels;
  DenseVec truth;  // hidden separator / regressor, bias last

  std::size_t size() const { return features.rows; }
  std::size_t dim() const { return features.cols; }
  Minibatch as_batch() const { return {features, labels}; }
};

/// Standard-normal features; labels from a hidden linear ground truth.
/// Classification labels are flipped with probability `noise`.
inline Dataset make_synthetic(const DatasetSpec& spec) {
  if (spec.n_samples == 0) throw ConfigError("data.samples", "must be positive");
  if (spec.dim == 0) throw ConfigError("data.dim", "must be positive");
  if (!(spec.noise >= 0.0)) throw ConfigError("data.noise", "must be non-negative");
  if (spec.kind == DatasetKind::Classification && spec.noise > 1.0)
    throw ConfigError("data.noise", "label noise rate must be in [0, 1]");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  ds.kind = spec.kind;
  ds.truth.resize(spec.dim + 1);
  for (double& t : ds.truth) t = normal(rng);
  ds.truth.back() *= 0.5;

  ds.features = DenseMat(spec.n_samples, spec.dim);
  ds.labels.resize(spec.n_samples);
  for (std::size_t i = 0; i < spec.n_samples; ++i) {
    auto x = ds.features.row(i);
    for (double& v : x) v = normal(rng);
    const double score = detail::dot(std::span<const double>(ds.truth).first(spec.dim), x) + ds.truth.back();
    if (spec.kind == DatasetKind::Regression) {
      ds.labels[i] = score + spec.noise * normal(rng);
    } else {
      double y = score > 0.0 ? 1.0 : 0.0;
      if (unit(rng) < spec.noise) y = 1.0 - y;
      ds.labels[i] = y;
    }
  }
  return ds;
}

/// Batch for (worker, iteration) drawn with replacement. Depends only on the
/// arguments, so every strategy and every schedule sees the same batches.
inline Minibatch sample_batch(const Dataset& ds, std::size_t batch_size, std::uint64_t seed, std::uint64_t worker,
                              std::uint64_t iteration) {
  if (batch_size == 0) throw ConfigError("optim.batch_size", "must be positive");
  std::mt19937_64 rng(derive_seed(derive_seed(seed, worker), iteration));
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  Minibatch b{DenseMat(batch_size, ds.dim()), DenseVec(batch_size)};
  for (std::size_t r = 0; r < batch_size; ++r) {
    const std::size_t idx = pick(rng);
    std::copy_n(ds.features.row(idx).begin(), ds.dim(), b.features.row(r).begin());
    b.labels[r] = ds.labels[idx];
  }
  return b;
}

/// Fraction of correctly classified samples. Zero for regression models.
inline double accuracy(const Architecture& arch, std::span<const double> params, const Dataset& ds) {
  if (!arch.is_classifier()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const double pred = predict(arch, params, ds.features.row(i)) > 0.0 ? 1.0 : 0.0;
    if (pred == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace numkernel
}  // namespace ssdsgd
