// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The ssdsgd Authors

#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "ssdsgd/errors.hpp"
#include "ssdsgd/metrics.hpp"
#include "ssdsgd/pipesim.hpp"

namespace ssdsgd::pipesim {

// Profile files are INI with one [profile] section:
//
//   [profile]
//   ; arrays are per layer, input layer first
//   forward = 1.0
//   backward = 0.5 0.5 1.0
//   send = ...
//   recv = ...
//   sync = ...
//   update = ...
//   local_update = ...

inline std::vector<double> parse_cost_list(const std::string& text, const std::string& field) {
  std::vector<double> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(parse_double(tok, field.c_str()));
  return out;
}

inline TimingProfile read_profile(std::istream& is) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("profile", std::string("malformed profile: ") + e.message());
  }
  for (const auto& [section, _] : tree)
    if (section != "profile") throw ConfigError(section, "unknown profile section");
  const auto sec = tree.get_child_optional("profile");
  if (!sec) throw ConfigError("profile", "missing [profile] section");

  TimingProfile p;
  std::set<std::string> seen;
  for (const auto& [key, node] : *sec) {
    const std::string field = "profile." + key;
    const auto value = node.get_value<std::string>();
    if (key == "forward") {
      p.forward = parse_double(value, field.c_str());
    } else if (key == "backward") {
      p.backward = parse_cost_list(value, field);
    } else if (key == "send") {
      p.send = parse_cost_list(value, field);
    } else if (key == "recv") {
      p.recv = parse_cost_list(value, field);
    } else if (key == "sync") {
      p.sync = parse_cost_list(value, field);
    } else if (key == "update") {
      p.update = parse_cost_list(value, field);
    } else if (key == "local_update") {
      p.local_update = parse_cost_list(value, field);
    } else {
      throw ConfigError(field, "unknown key");
    }
    seen.insert(key);
  }
  for (const char* required : {"forward", "backward", "send", "recv", "update", "local_update"})
    if (!seen.count(required)) throw ConfigError(std::string("profile.") + required, "missing");
  // sync may be omitted: no explicit wait.
  if (!seen.count("sync")) p.sync.assign(p.backward.size(), 0.0);
  p.validate();
  return p;
}

inline TimingProfile read_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("profile", "cannot open profile '" + path + "'");
  return read_profile(in);
}

inline void write_profile(std::ostream& os, const TimingProfile& p) {
  auto list = [&os](const char* name, const std::vector<double>& v) {
    os << name << " =";
    for (double x : v) os << ' ' << format_double(x);
    os << '\n';
  };
  os << "[profile]\n";
  os << "forward = " << format_double(p.forward) << '\n';
  list("backward", p.backward);
  list("send", p.send);
  list("recv", p.recv);
  list("sync", p.sync);
  list("update", p.update);
  list("local_update", p.local_update);
}

}  // namespace ssdsgd::pipesim
