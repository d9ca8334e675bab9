// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <charconv>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "ssdsgd/errors.hpp"

namespace ssdsgd {

/// One evaluation row of a training run.
struct MetricRecord {
  std::uint64_t iteration = 0;  // global iterations completed
  double epoch = 0.0;           // samples consumed / dataset size
  double train_loss = 0.0;      // mean loss over the full training set
  double eval_accuracy = 0.0;   // 0 for regression
  double wall_time_s = 0.0;
  double sim_time = 0.0;        // modeled pipeline time; 0 without a profile
  std::uint64_t pushes = 0;     // per worker, cumulative
  std::uint64_t pulls = 0;      // per worker, cumulative

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

inline constexpr std::string_view kMetricsHeader =
    "iteration,epoch,train_loss,eval_accuracy,wall_time_s,sim_time,pushes,pulls";

/// Shortest decimal form that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline double parse_double(std::string_view s, const char* field) {
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(field, "not a number: '" + std::string(s) + "'");
  return v;
}

inline std::uint64_t parse_u64(std::string_view s, const char* field) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(field, "not an unsigned integer: '" + std::string(s) + "'");
  return v;
}

inline void write_metrics_csv(std::ostream& os, const std::vector<MetricRecord>& records) {
  os << kMetricsHeader << '\n';
  for (const auto& r : records)
    os << r.iteration << ',' << format_double(r.epoch) << ',' << format_double(r.train_loss) << ','
       << format_double(r.eval_accuracy) << ',' << format_double(r.wall_time_s) << ',' << format_double(r.sim_time)
       << ',' << r.pushes << ',' << r.pulls << '\n';
}

inline std::vector<MetricRecord> read_metrics_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw ConfigError("csv.header", "unexpected metrics header");
  std::vector<MetricRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string_view> cols;
    std::string_view rest(line);
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      cols.push_back(rest.substr(0, pos));
    cols.push_back(rest);
    if (cols.size() != 8) throw ConfigError("csv.row", "expected 8 columns, got " + std::to_string(cols.size()));
    MetricRecord r;
    r.iteration = parse_u64(cols[0], "iteration");
    r.epoch = parse_double(cols[1], "epoch");
    r.train_loss = parse_double(cols[2], "train_loss");
    r.eval_accuracy = parse_double(cols[3], "eval_accuracy");
    r.wall_time_s = parse_double(cols[4], "wall_time_s");
    r.sim_time = parse_double(cols[5], "sim_time");
    r.pushes = parse_u64(cols[6], "pushes");
    r.pulls = parse_u64(cols[7], "pulls");
    out.push_back(r);
  }
  return out;
}

inline std::string metrics_to_csv(const std::vector<MetricRecord>& records) {
  std::ostringstream os;
  write_metrics_csv(os, records);
  return os.str();
}

}  // namespace ssdsgd
