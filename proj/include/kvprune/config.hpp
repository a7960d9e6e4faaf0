#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kvprune/decoder.hpp"
#include "kvprune/error.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/trace.hpp"

namespace kvprune {

// Flat key-value config: one `dotted.key = value` per line, '#' starts a
// comment, lists are comma separated. Every diagnostic carries the exact
// line number.
class FlatConfig {
 public:
  static FlatConfig parse_string(std::string_view text, std::string origin = "<config>") {
    FlatConfig cfg;
    cfg.origin_ = std::move(origin);
    std::size_t line_no = 0;
    std::string line;
    std::istringstream in{std::string(text)};
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const std::size_t eq = trimmed.find('=');
      if (eq == std::string::npos) {
        throw InvalidConfig(cfg.where(line_no) + ": expected 'key = value', got '" + trimmed + "'");
      }
      std::string key = trim(trimmed.substr(0, eq));
      std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty()) throw InvalidConfig(cfg.where(line_no) + ": empty key");
      auto [it, inserted] = cfg.entries_.emplace(key, Entry{value, line_no});
      if (!inserted) {
        throw InvalidConfig(cfg.where(line_no) + ": duplicate key '" + key + "' (first at line " +
                            std::to_string(it->second.line) + ")");
      }
    }
    return cfg;
  }

  static FlatConfig parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidConfig("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_string(buf.str(), path);
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.used = true;
    return it->second.value;
  }

  double get_double(const std::string& key, double fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.used = true;
    return parse_double(it->second.value, key, it->second.line);
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.used = true;
    return parse_u64(it->second.value, key, it->second.line);
  }

  std::size_t get_count(const std::string& key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
  }

  bool get_bool(const std::string& key, bool fallback) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.used = true;
    const std::string& v = it->second.value;
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw InvalidConfig(where(it->second.line) + ": key '" + key + "' expects true/false, got '" +
                        v + "'");
  }

  std::vector<std::string> get_string_list(const std::string& key,
                                           std::vector<std::string> fallback = {}) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    it->second.used = true;
    std::vector<std::string> out;
    std::string token;
    std::istringstream ss(it->second.value);
    while (std::getline(ss, token, ',')) {
      token = trim(token);
      if (!token.empty()) out.push_back(token);
    }
    if (out.empty()) {
      throw InvalidConfig(where(it->second.line) + ": key '" + key + "' expects a list");
    }
    return out;
  }

  std::vector<double> get_double_list(const std::string& key,
                                      std::vector<double> fallback = {}) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<double> out;
    for (const std::string& tok : get_string_list(key)) {
      out.push_back(parse_double(tok, key, it->second.line));
    }
    return out;
  }

  std::vector<std::size_t> get_count_list(const std::string& key,
                                          std::vector<std::size_t> fallback = {}) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::vector<std::size_t> out;
    for (const std::string& tok : get_string_list(key)) {
      out.push_back(static_cast<std::size_t>(parse_u64(tok, key, it->second.line)));
    }
    return out;
  }

  // Rejects keys no getter consumed; catches typos and stale fields.
  void fail_on_unused() const {
    for (const auto& [key, entry] : entries_) {
      if (!entry.used) {
        throw InvalidConfig(where(entry.line) + ": unknown key '" + key + "'");
      }
    }
  }

  const std::string& origin() const { return origin_; }

 private:
  struct Entry {
    std::string value;
    std::size_t line;
    mutable bool used = false;
  };

  static std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::string where(std::size_t line) const { return origin_ + ":" + std::to_string(line); }

  double parse_double(const std::string& v, const std::string& key, std::size_t line) const {
    char* end = nullptr;
    double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
      throw InvalidConfig(where(line) + ": key '" + key + "' expects a number, got '" + v + "'");
    }
    return x;
  }

  std::uint64_t parse_u64(const std::string& v, const std::string& key, std::size_t line) const {
    char* end = nullptr;
    unsigned long long x = std::strtoull(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
      throw InvalidConfig(where(line) + ": key '" + key + "' expects a non-negative integer, got '" +
                          v + "'");
    }
    return x;
  }

  std::string origin_ = "<config>";
  std::map<std::string, Entry> entries_;
};

// -- schema ------------------------------------------------------------

inline ModelConfig parse_model_config(const FlatConfig& cfg) {
  ModelConfig model;
  model.n_layers = cfg.get_count("model.n_layers", model.n_layers);
  model.n_heads = cfg.get_count("model.n_heads", model.n_heads);
  model.d_head = cfg.get_count("model.d_head", model.d_head);
  model.d_model = cfg.get_count("model.d_model", model.n_heads * model.d_head);
  model.vocab_size = cfg.get_count("model.vocab_size", model.vocab_size);
  model.seed = cfg.get_u64("model.seed", model.seed);
  model.sink_bias = cfg.get_bool("model.sink_bias", model.sink_bias);
  model.validate();
  return model;
}

// Shared policy hyperparameters under the `policy.` prefix.
inline PolicyConfig apply_policy_overrides(const FlatConfig& cfg, PolicyConfig policy) {
  policy.budget_ratio = cfg.get_double("policy.budget_ratio", policy.budget_ratio);
  policy.sink_count = cfg.get_count("policy.sink_count", policy.sink_count);
  policy.local_window = cfg.get_count("policy.local_window", policy.local_window);
  policy.history_window = cfg.get_count("policy.history_window", policy.history_window);
  if (cfg.has("policy.norm_order")) {
    policy.norm_order = parse_norm_order(cfg.get_string("policy.norm_order", "1"));
  }
  policy.validate();
  return policy;
}

// The single policy named by the `policy` key (trace record/replay).
inline PolicyConfig parse_single_policy(const FlatConfig& cfg) {
  PolicyConfig policy = parse_policy_name(cfg.get_string("policy", "h2o"));
  return apply_policy_overrides(cfg, policy);
}

inline SyntheticTraceSpec parse_synth_spec(const FlatConfig& cfg) {
  SyntheticTraceSpec spec;
  spec.length = cfg.get_count("synth.length", spec.length);
  spec.sink_positions = cfg.get_count_list("synth.sink_positions", spec.sink_positions);
  spec.sink_attention_mass = cfg.get_double("synth.sink_attention_mass", spec.sink_attention_mass);
  spec.sink_value_norm = cfg.get_double("synth.sink_value_norm", spec.sink_value_norm);
  spec.background_norm_lo = cfg.get_double("synth.background_norm_lo", spec.background_norm_lo);
  spec.background_norm_hi = cfg.get_double("synth.background_norm_hi", spec.background_norm_hi);
  spec.seed = cfg.get_u64("synth.seed", spec.seed);
  spec.validate();
  return spec;
}

}  // namespace kvprune
