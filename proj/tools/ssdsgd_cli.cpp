// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

// ssdsgd run     train one configuration (or a k / warm-up sweep)
// ssdsgd timing  analytic vs simulated iteration times for a profile

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/experiment.hpp"
#include "ssdsgd/pipesim.hpp"
#include "ssdsgd/profile_io.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct FlagField {
  const char* flag;
  const char* field;
  const char* help;
};

// Value flags that map 1:1 onto config keys.
constexpr FlagField kFlagFields[] = {
    {"--strategy", "cluster.strategy", "ssgd | asgd | ssd-sgd"},
    {"--optimizer-local", "cluster.optimizer_local", "sgd | glu | none"},
    {"--workers", "cluster.workers", "worker count K"},
    {"--servers", "cluster.servers", "server count S"},
    {"--devices", "cluster.devices", "devices per worker (splits the batch)"},
    {"--transport", "cluster.transport", "inproc | socket (threaded mode)"},
    {"--latency-us", "cluster.latency_us", "injected per-message latency"},
    {"--k", "optim.k", "delay steps between pulls"},
    {"--warmup", "optim.warmup", "warm-up iterations"},
    {"--alpha", "optim.alpha", "local-gradient coefficient"},
    {"--beta", "optim.beta", "inferred-global-gradient coefficient"},
    {"--lr", "optim.lr", "global learning rate"},
    {"--loc-lr", "optim.loc_lr", "local learning rate (default 4 x lr)"},
    {"--momentum", "optim.momentum", "server momentum"},
    {"--wd", "optim.wd", "weight decay"},
    {"--batch-size", "optim.batch_size", "per-worker batch size"},
    {"--model", "model.kind", "linear-regression | logistic-regression | mlp-2layer"},
    {"--hidden", "model.hidden", "mlp-2layer hidden width"},
    {"--samples", "data.samples", "dataset size"},
    {"--dim", "data.dim", "feature dimension"},
    {"--noise", "data.noise", "label noise rate"},
    {"--iterations", "run.iterations", "training iterations, warm-up included"},
    {"--eval-interval", "run.eval_interval", "iterations between metric rows"},
    {"--seed", "run.seed", "master seed"},
    {"--out", "run.out", "output directory"},
    {"--profile", "run.profile", "timing profile used for sim_time"},
};

int run_command(const std::string& config_path, const std::map<std::string, std::string>& overrides,
                bool deterministic, const std::string& sweep_k, const std::string& sweep_wp,
                const std::string& emit_profile) {
  ssdsgd::xcli::ExperimentConfig cfg;
  if (!config_path.empty()) ssdsgd::xcli::apply_ini_file(cfg, config_path);
  for (const auto& [field, value] : overrides) ssdsgd::xcli::set_field(cfg, field, value);
  if (deterministic) cfg.deterministic = true;

  if (!sweep_k.empty() && !sweep_wp.empty()) throw ssdsgd::ConfigError("sweep-k", "cannot combine with --sweep-wp");
  if (!sweep_k.empty()) {
    const auto [a, b] = ssdsgd::xcli::parse_range(sweep_k, "sweep-k");
    ssdsgd::xcli::sweep_k(cfg, a, b, &std::cout);
    return kExitOk;
  }
  if (!sweep_wp.empty()) {
    ssdsgd::xcli::sweep_warmup(cfg, ssdsgd::xcli::parse_list(sweep_wp, "sweep-wp"), &std::cout);
    return kExitOk;
  }
  std::optional<ssdsgd::pipesim::TimingProfile> measured;
  if (!emit_profile.empty() && !cfg.deterministic)
    throw ssdsgd::ConfigError("emit-profile", "requires deterministic mode");
  const auto summary =
      ssdsgd::xcli::run_experiment(cfg, "metrics.csv", emit_profile.empty() ? nullptr : &measured);
  ssdsgd::xcli::print_summary(std::cout, cfg, summary);
  if (measured) {
    std::ofstream out(emit_profile);
    if (!out) throw ssdsgd::RuntimeFault("cannot write '" + emit_profile + "'");
    ssdsgd::pipesim::write_profile(out, *measured);
  }
  return kExitOk;
}

int timing_command(const std::string& profile_path, const std::string& sweep_k, const std::string& out_dir,
                   std::optional<std::uint32_t> trace_k, std::uint64_t trace_iters) {
  const auto profile = ssdsgd::pipesim::read_profile_file(profile_path);
  const auto [a, b] = ssdsgd::xcli::parse_range(sweep_k, "sweep-k");
  const auto study = ssdsgd::pipesim::run_timing_study(profile, a, b);
  const auto table = ssdsgd::xcli::timing_table(study);
  std::cout << "ssgd analytic=" << ssdsgd::format_double(study.ssgd_analytic)
            << " simulated=" << ssdsgd::format_double(study.ssgd_simulated) << '\n'
            << table;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    ssdsgd::xcli::write_text(std::filesystem::path(out_dir) / "timing.csv", table);
    if (trace_k) {
      ssdsgd::pipesim::SimOptions opts;
      opts.record_trace = true;
      const auto strategy = *trace_k == 0 ? ssdsgd::pipesim::Strategy::Ssgd : ssdsgd::pipesim::Strategy::SsdSgd;
      const std::uint32_t k = *trace_k == 0 ? 1 : *trace_k;
      const auto sim = ssdsgd::pipesim::simulate_pipeline(profile, strategy, k, std::max<std::uint64_t>(trace_iters, k), opts);
      std::ofstream out(std::filesystem::path(out_dir) / "trace.csv");
      if (!out) throw ssdsgd::RuntimeFault("cannot write trace.csv");
      ssdsgd::pipesim::write_trace_csv(out, sim.trace);
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SSD-SGD parameter-server trainer and pipeline timing model"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train and write metrics CSV");
  std::string config_path, sweep_k, sweep_wp, emit_profile;
  bool deterministic = false;
  std::map<std::string, std::string> values;
  std::vector<std::pair<const char*, CLI::Option*>> value_opts;
  for (const auto& f : kFlagFields) value_opts.emplace_back(f.field, run->add_option(f.flag, values[f.field], f.help));
  run->add_option("--config", config_path, "INI config file")->check(CLI::ExistingFile);
  run->add_flag("--deterministic", deterministic, "single-threaded logical-clock execution");
  run->add_option("--sweep-k", sweep_k, "run every k in a..b");
  run->add_option("--sweep-wp", sweep_wp, "run every warm-up length in a comma-separated list");
  run->add_option("--emit-profile", emit_profile, "write a measured timing profile (deterministic runs)");

  auto* timing = app.add_subcommand("timing", "analytic vs simulated average iteration time");
  std::string profile_path, timing_out, timing_sweep = "1..5";
  std::optional<std::uint32_t> trace_k;
  std::uint64_t trace_iters = 20;
  timing->add_option("--profile", profile_path, "timing profile (INI)")->required();
  timing->add_option("--sweep-k", timing_sweep, "k range a..b")->capture_default_str();
  timing->add_option("--out", timing_out, "directory for timing.csv and trace.csv");
  timing->add_option("--trace-k", trace_k, "write an event trace for this k (0 = SSGD)");
  timing->add_option("--trace-iterations", trace_iters, "iterations in the trace")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) {
      std::map<std::string, std::string> overrides;
      for (const auto& [field, opt] : value_opts)
        if (opt->count() > 0) overrides[field] = values[field];
      return run_command(config_path, overrides, deterministic, sweep_k, sweep_wp, emit_profile);
    }
    return timing_command(profile_path, timing_sweep, timing_out, trace_k, trace_iters);
  } catch (const ssdsgd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
