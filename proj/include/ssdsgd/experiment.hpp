// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/metrics.hpp"
#include "ssdsgd/numkernel.hpp"
#include "ssdsgd/optim.hpp"
#include "ssdsgd/pipesim.hpp"
#include "ssdsgd/profile_io.hpp"
#include "ssdsgd/runtime.hpp"

namespace ssdsgd::xcli {

/// Everything one experiment needs. Field names in diagnostics are
/// "section.key", matching the config file.
struct ExperimentConfig {
  numkernel::ModelKind model = numkernel::ModelKind::LogisticRegression;
  std::size_t hidden = 16;
  numkernel::DatasetSpec data;
  std::optional<std::uint64_t> data_seed;  // default: split from run.seed
  optim::HyperParams hp;
  bool loc_lr_set = false;  // default loc_lr is 4 * lr
  ps::Strategy strategy = ps::Strategy::SsdSgd;
  ps::LocalOptimizer local_optimizer = ps::LocalOptimizer::Glu;
  std::size_t servers = 1;
  std::size_t devices = 1;
  bool deterministic = false;
  bool asgd_momentum = true;
  ps::TransportKind transport = ps::TransportKind::InProcess;
  std::uint64_t latency_us = 0;
  std::uint64_t iterations = 2000;
  std::uint64_t eval_interval = 50;
  std::uint64_t seed = 0;
  std::string out = "out";
  std::string profile;  // optional timing profile for sim_time
};

namespace detail {

inline bool parse_bool(std::string_view s, const std::string& field) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(field, "expected a boolean, got '" + std::string(s) + "'");
}

inline std::uint64_t u64(std::string_view s, const std::string& field) { return parse_u64(s, field.c_str()); }
inline double f64(std::string_view s, const std::string& field) { return parse_double(s, field.c_str()); }

}  // namespace detail

/// Sets one field from its text form. Throws ConfigError naming the field
/// for unknown keys and malformed values.
inline void set_field(ExperimentConfig& c, const std::string& field, const std::string& value) {
  using detail::f64;
  using detail::u64;
  const std::string& f = field;
  const std::string& v = value;
  if (f == "model.kind") c.model = numkernel::parse_model_kind(v);
  else if (f == "model.hidden") c.hidden = u64(v, f);
  else if (f == "data.kind") c.data.kind = numkernel::parse_dataset_kind(v);
  else if (f == "data.samples") c.data.n_samples = u64(v, f);
  else if (f == "data.dim") c.data.dim = u64(v, f);
  else if (f == "data.noise") c.data.noise = f64(v, f);
  else if (f == "data.seed") c.data_seed = u64(v, f);
  else if (f == "optim.lr") c.hp.lr = f64(v, f);
  else if (f == "optim.loc_lr") { c.hp.loc_lr = f64(v, f); c.loc_lr_set = true; }
  else if (f == "optim.alpha") c.hp.alpha = f64(v, f);
  else if (f == "optim.beta") c.hp.beta = f64(v, f);
  else if (f == "optim.wd") c.hp.wd = f64(v, f);
  else if (f == "optim.momentum") c.hp.m = f64(v, f);
  else if (f == "optim.k") {
    const auto k = u64(v, f);
    if (k > 0xffffffffULL) throw ConfigError(f, "too large");
    c.hp.k = static_cast<std::uint32_t>(k);
  }
  else if (f == "optim.warmup") c.hp.wp = u64(v, f);
  else if (f == "optim.batch_size") c.hp.B = u64(v, f);
  else if (f == "cluster.strategy") c.strategy = ps::parse_strategy(v);
  else if (f == "cluster.optimizer_local") c.local_optimizer = ps::parse_local_optimizer(v);
  else if (f == "cluster.workers") c.hp.K = u64(v, f);
  else if (f == "cluster.servers") c.servers = u64(v, f);
  else if (f == "cluster.devices") c.devices = u64(v, f);
  else if (f == "cluster.deterministic") c.deterministic = detail::parse_bool(v, f);
  else if (f == "cluster.asgd_momentum") c.asgd_momentum = detail::parse_bool(v, f);
  else if (f == "cluster.transport") c.transport = ps::parse_transport(v);
  else if (f == "cluster.latency_us") c.latency_us = u64(v, f);
  else if (f == "run.iterations") c.iterations = u64(v, f);
  else if (f == "run.eval_interval") c.eval_interval = u64(v, f);
  else if (f == "run.seed") c.seed = u64(v, f);
  else if (f == "run.out") c.out = v;
  else if (f == "run.profile") c.profile = v;
  else throw ConfigError(f, "unknown key");
}

/// Applies every key of an INI document on top of `c`.
inline void apply_ini(ExperimentConfig& c, std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [section, node] : tree) {
    if (node.empty() && !node.data().empty()) throw ConfigError(section, "key outside of a section");
    for (const auto& [key, leaf] : node) set_field(c, section + "." + key, leaf.get_value<std::string>());
  }
}

inline void apply_ini_file(ExperimentConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open config '" + path + "'");
  apply_ini(c, in);
}

inline std::uint64_t dataset_seed(const ExperimentConfig& c) {
  return c.data_seed ? *c.data_seed : derive_seed(c.seed, ps::seed_stream::kDataset);
}

/// Runtime view of the config. Fills loc_lr = 4 * lr unless set.
inline ps::RuntimeConfig to_runtime(const ExperimentConfig& c) {
  ps::RuntimeConfig r;
  r.arch = numkernel::make_architecture(c.model, c.data.dim, c.hidden);
  r.hp = c.hp;
  if (!c.loc_lr_set) r.hp.loc_lr = 4.0 * c.hp.lr;
  r.strategy = c.strategy;
  r.local_optimizer = c.local_optimizer;
  r.servers = c.servers;
  r.devices = c.devices;
  r.iterations = c.iterations;
  r.eval_interval = c.eval_interval;
  r.seed = c.seed;
  r.deterministic = c.deterministic;
  r.asgd_momentum = c.asgd_momentum;
  r.transport = c.transport;
  r.link.latency = std::chrono::microseconds(c.latency_us);
  return r;
}

/// Every violated invariant, one per field.
inline std::vector<optim::FieldIssue> check(const ExperimentConfig& c) {
  std::vector<optim::FieldIssue> out;
  if (c.data.n_samples == 0) out.push_back({"data.samples", "must be positive"});
  if (c.data.dim == 0) out.push_back({"data.dim", "must be positive"});
  if (!(c.data.noise >= 0.0)) out.push_back({"data.noise", "must be >= 0"});
  if (c.data.kind == numkernel::DatasetKind::Classification && c.data.noise > 1.0)
    out.push_back({"data.noise", "label noise rate must be in [0, 1]"});
  const bool classifier = c.model != numkernel::ModelKind::LinearRegression;
  if (classifier != (c.data.kind == numkernel::DatasetKind::Classification))
    out.push_back({"data.kind", "does not match model.kind"});
  if (c.model == numkernel::ModelKind::Mlp2 && c.hidden == 0) out.push_back({"model.hidden", "must be positive"});
  if (c.out.empty()) out.push_back({"run.out", "must not be empty"});
  if (!c.out.empty() && std::filesystem::exists(c.out) && !std::filesystem::is_directory(c.out))
    out.push_back({"run.out", "exists and is not a directory"});
  if (c.data.dim > 0 && (c.model != numkernel::ModelKind::Mlp2 || c.hidden > 0)) {
    const auto rt_issues = ps::check(to_runtime(c));
    out.insert(out.end(), rt_issues.begin(), rt_issues.end());
  }
  return out;
}

inline void validate(const ExperimentConfig& c) {
  const auto issues = check(c);
  if (!issues.empty()) throw ConfigError(issues.front().field, issues.front().message);
}

// ---------------------------------------------------------------------------
// Running

struct ExperimentSummary {
  std::string csv_path;
  MetricRecord last;
  double wall_seconds = 0.0;
  double wall_per_iteration = 0.0;
};

inline numkernel::Dataset make_dataset(const ExperimentConfig& c) {
  auto spec = c.data;
  spec.seed = dataset_seed(c);
  return numkernel::make_synthetic(spec);
}

/// Adds modeled iteration times from the profile, if one is configured.
inline void attach_profile(const ExperimentConfig& c, ps::RuntimeConfig& r) {
  if (c.profile.empty()) return;
  const auto p = pipesim::read_profile_file(c.profile);
  r.sim_warmup_iter = pipesim::ssgd_iter_time(p);
  r.sim_delay_iter =
      c.strategy == ps::Strategy::SsdSgd ? pipesim::ssd_avg_iter_time(p, r.hp.k).value : r.sim_warmup_iter;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFault("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw RuntimeFault("write failed for '" + path.string() + "'");
}

/// Runs one experiment and writes its metrics CSV to `<out>/<csv_name>`.
inline ExperimentSummary run_experiment(const ExperimentConfig& c, const std::string& csv_name = "metrics.csv",
                                        std::optional<pipesim::TimingProfile>* measured = nullptr) {
  validate(c);
  auto rt = to_runtime(c);
  attach_profile(c, rt);
  if (measured) rt.instrument = true;
  const auto data = make_dataset(c);
  const auto res = ps::run_training(rt, data);
  if (measured) *measured = res.measured_profile;

  std::filesystem::create_directories(c.out);
  ExperimentSummary s;
  s.csv_path = (std::filesystem::path(c.out) / csv_name).string();
  write_text(s.csv_path, metrics_to_csv(res.records));
  if (!res.records.empty()) s.last = res.records.back();
  s.wall_seconds = res.wall_seconds;
  s.wall_per_iteration = res.wall_seconds / static_cast<double>(c.iterations);
  return s;
}

inline void print_summary(std::ostream& os, const ExperimentConfig& c, const ExperimentSummary& s) {
  os << "strategy=" << ps::to_string(c.strategy) << " k=" << c.hp.k << " warmup=" << c.hp.wp
     << " iterations=" << s.last.iteration << " final_loss=" << format_double(s.last.train_loss)
     << " final_accuracy=" << format_double(s.last.eval_accuracy)
     << " wall_per_iteration_s=" << format_double(s.wall_per_iteration) << " csv=" << s.csv_path << '\n';
}

struct SweepRow {
  std::uint32_t k = 1;
  std::uint64_t warmup = 0;
  MetricRecord last;
};

inline std::string sweep_table(const std::vector<SweepRow>& rows) {
  std::string out = "k,warmup,iteration,final_loss,final_accuracy,pushes,pulls,sim_time\n";
  for (const auto& r : rows)
    out += std::to_string(r.k) + ',' + std::to_string(r.warmup) + ',' + std::to_string(r.last.iteration) + ',' +
           format_double(r.last.train_loss) + ',' + format_double(r.last.eval_accuracy) + ',' +
           std::to_string(r.last.pushes) + ',' + std::to_string(r.last.pulls) + ',' + format_double(r.last.sim_time) +
           '\n';
  return out;
}

/// Largest warm-up length <= wp with (1 + wp) % k == 0, or k - 1 when none
/// exists.
inline std::uint64_t aligned_warmup(std::uint64_t wp, std::uint32_t k) {
  if (wp + 1 < k) return k - 1;
  return wp - (wp + 1) % k;
}

/// One run per k in [k_min, k_max]: metrics_k<k>.csv plus comparison.csv.
/// Under ssd-sgd each run uses aligned_warmup(wp, k) so every k passes the
/// warm-up cadence check.
inline std::vector<SweepRow> sweep_k(ExperimentConfig c, std::uint32_t k_min, std::uint32_t k_max,
                                     std::ostream* log = nullptr) {
  if (k_min < 1 || k_max < k_min) throw ConfigError("sweep-k", "expected a..b with 1 <= a <= b");
  const std::uint64_t base_wp = c.hp.wp;
  std::vector<SweepRow> rows;
  for (std::uint32_t k = k_min; k <= k_max; ++k) {
    c.hp.k = k;
    if (c.strategy == ps::Strategy::SsdSgd) c.hp.wp = aligned_warmup(base_wp, k);
    if (log && c.hp.wp != base_wp) *log << "k=" << k << ": warmup " << base_wp << " -> " << c.hp.wp << '\n';
    const auto s = run_experiment(c, "metrics_k" + std::to_string(k) + ".csv");
    if (log) print_summary(*log, c, s);
    rows.push_back({k, c.hp.wp, s.last});
  }
  write_text(std::filesystem::path(c.out) / "comparison.csv", sweep_table(rows));
  return rows;
}

/// One run per warm-up length: metrics_wp<wp>.csv plus warmup_comparison.csv.
inline std::vector<SweepRow> sweep_warmup(ExperimentConfig c, const std::vector<std::uint64_t>& warmups,
                                          std::ostream* log = nullptr) {
  if (warmups.empty()) throw ConfigError("sweep-wp", "no warm-up lengths given");
  std::vector<SweepRow> rows;
  for (auto wp : warmups) {
    c.hp.wp = wp;
    const auto s = run_experiment(c, "metrics_wp" + std::to_string(wp) + ".csv");
    if (log) print_summary(*log, c, s);
    rows.push_back({c.hp.k, wp, s.last});
  }
  write_text(std::filesystem::path(c.out) / "warmup_comparison.csv", sweep_table(rows));
  return rows;
}

/// "a..b" -> (a, b).
inline std::pair<std::uint32_t, std::uint32_t> parse_range(std::string_view s, const std::string& field) {
  const auto dots = s.find("..");
  if (dots == std::string_view::npos) throw ConfigError(field, "expected a..b, got '" + std::string(s) + "'");
  const auto a = parse_u64(s.substr(0, dots), field.c_str());
  const auto b = parse_u64(s.substr(dots + 2), field.c_str());
  if (a < 1 || b < a || b > 0xffffffffULL) throw ConfigError(field, "expected 1 <= a <= b");
  return {static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
}

/// Comma-separated unsigned integers.
inline std::vector<std::uint64_t> parse_list(std::string_view s, const std::string& field) {
  std::vector<std::uint64_t> out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    out.push_back(parse_u64(s.substr(0, comma), field.c_str()));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError(field, "empty list");
  return out;
}

// ---------------------------------------------------------------------------
// Timing study output

inline std::string timing_table(const pipesim::TimingStudy& study) {
  std::string out = "k,analytic,simulated,speedup,case\n";
  for (const auto& r : study.rows)
    out += std::to_string(r.k) + ',' + format_double(r.analytic) + ',' + format_double(r.simulated) + ',' +
           format_double(r.speedup) + ',' + std::string(pipesim::to_string(r.pipeline_case)) + '\n';
  return out;
}

}  // namespace ssdsgd::xcli
