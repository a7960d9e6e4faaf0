#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kvprune/error.hpp"
#include "kvprune/kv_cache.hpp"
#include "kvprune/math.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/rng.hpp"

namespace kvprune {

// One attention event: the row the newest token's query produced over the
// slots of one head, plus the norm of the value vector appended at this step.
struct TraceRecord {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
  Vec64 attention_row;
  std::size_t position = 0;   // new token's sequence index
  double value_norm = 0.0;    // new token's value norm
  std::size_t value_dim = 0;  // d_head
};

// A serializable stream of TraceRecords. `prefill_len` marks where the prompt
// ends so replay can schedule budget enforcement like a live run; 0 means
// "the whole trace is prompt" (single prune at the end).
struct Trace {
  std::size_t prefill_len = 0;
  bool decimal = false;  // human-readable debug encoding; hex is canonical
  std::vector<TraceRecord> records;
};

namespace detail {

inline std::string encode_f64_hex(double x) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(x)));
  return std::string(buf);
}

inline std::string encode_f64_dec(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline double decode_f64(const std::string& token, bool decimal, std::size_t line_no) {
  const char* s = token.c_str();
  char* end = nullptr;
  if (decimal) {
    double v = std::strtod(s, &end);
    if (end == s || *end != '\0') {
      throw InvalidTrace("line " + std::to_string(line_no) + ": bad decimal float '" + token + "'");
    }
    return v;
  }
  if (token.size() != 16) {
    throw InvalidTrace("line " + std::to_string(line_no) + ": bad hex float '" + token + "'");
  }
  std::uint64_t bits = std::strtoull(s, &end, 16);
  if (end != s + 16) {
    throw InvalidTrace("line " + std::to_string(line_no) + ": bad hex float '" + token + "'");
  }
  return std::bit_cast<double>(bits);
}

inline std::size_t parse_count(const std::string& token, std::size_t line_no, const char* what) {
  char* end = nullptr;
  unsigned long long v = std::strtoull(token.c_str(), &end, 10);
  if (end == token.c_str() || *end != '\0') {
    throw InvalidTrace("line " + std::to_string(line_no) + ": bad " + what + " '" + token + "'");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline constexpr const char* kTraceMagic = "KVTRACE v1";

// Record lines carry (t, layer, head, row length, row values, position,
// value norm, value dim), whitespace separated. Hex float encoding is
// bit-exact across platforms.
inline void write_trace(std::ostream& out, const Trace& trace) {
  out << kTraceMagic;
  if (trace.decimal) out << " decimal";
  if (trace.prefill_len > 0) out << " prefill_len=" << trace.prefill_len;
  out << '\n';
  auto enc = [&](double x) {
    return trace.decimal ? detail::encode_f64_dec(x) : detail::encode_f64_hex(x);
  };
  for (const TraceRecord& rec : trace.records) {
    out << rec.step << ' ' << rec.layer << ' ' << rec.head << ' ' << rec.attention_row.size();
    for (double x : rec.attention_row) out << ' ' << enc(x);
    out << ' ' << rec.position << ' ' << enc(rec.value_norm) << ' ' << rec.value_dim << '\n';
  }
}

inline void write_trace_file(const std::string& path, const Trace& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trace file for writing: " + path);
  write_trace(out, trace);
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

inline Trace read_trace(std::istream& in) {
  Trace trace;
  std::string line;
  if (!std::getline(in, line)) throw InvalidTrace("line 1: missing header");
  {
    std::istringstream header(line);
    std::string word, version;
    header >> word >> version;
    if (word + " " + version != kTraceMagic) {
      throw InvalidTrace("line 1: expected '" + std::string(kTraceMagic) + "' header, got '" +
                         line + "'");
    }
    std::string opt;
    while (header >> opt) {
      if (opt == "decimal") {
        trace.decimal = true;
      } else if (opt.rfind("prefill_len=", 0) == 0) {
        trace.prefill_len = detail::parse_count(opt.substr(12), 1, "prefill_len");
      } else {
        throw InvalidTrace("line 1: unknown header option '" + opt + "'");
      }
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.size() < 4) throw InvalidTrace("line " + std::to_string(line_no) + ": truncated record");
    TraceRecord rec;
    rec.step = detail::parse_count(tokens[0], line_no, "step");
    rec.layer = detail::parse_count(tokens[1], line_no, "layer");
    rec.head = detail::parse_count(tokens[2], line_no, "head");
    std::size_t row_len = detail::parse_count(tokens[3], line_no, "row length");
    if (tokens.size() != 4 + row_len + 3) {
      throw InvalidTrace("line " + std::to_string(line_no) + ": expected " +
                         std::to_string(4 + row_len + 3) + " fields, got " +
                         std::to_string(tokens.size()));
    }
    std::vector<double> row(row_len);
    for (std::size_t i = 0; i < row_len; ++i) {
      row[i] = detail::decode_f64(tokens[4 + i], trace.decimal, line_no);
    }
    rec.attention_row = Vec64(std::move(row));
    rec.position = detail::parse_count(tokens[4 + row_len], line_no, "position");
    rec.value_norm = detail::decode_f64(tokens[5 + row_len], trace.decimal, line_no);
    rec.value_dim = detail::parse_count(tokens[6 + row_len], line_no, "value dim");
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

inline Trace read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trace file: " + path);
  return read_trace(in);
}

// State of one (layer, head) cache after one replayed step.
struct ReplayStepInfo {
  std::size_t step = 0;
  std::size_t layer = 0;
  std::size_t head = 0;
  ImportanceVector importance;          // scores the selection saw at this step
  std::vector<std::size_t> retained;    // positions surviving the step
  std::size_t evicted = 0;
};

struct ReplayReport {
  bool open_loop = true;  // evictions cannot alter the recorded rows
  std::size_t steps_replayed = 0;
  std::size_t base_budget = 0;
  EvictionReport evictions;
  std::vector<ReplayStepInfo> steps;
};

// Feeds a recorded trace through scoring and budget enforcement exactly as a
// live run would, except open-loop: when the replay cache has evicted
// positions that the recorded (full) rows still carry, the row is projected
// onto the surviving positions and the dropped mass is not renormalized.
inline ReplayReport replay(const Trace& trace, const PolicyConfig& cfg) {
  cfg.validate();
  ReplayReport report;
  if (trace.records.empty()) return report;

  std::size_t total_steps = 0;
  for (const TraceRecord& rec : trace.records) total_steps = std::max(total_steps, rec.step + 1);
  const std::size_t prefill_len = trace.prefill_len > 0 ? trace.prefill_len : total_steps;
  const std::size_t base_budget = derive_budget(cfg, prefill_len);
  report.base_budget = base_budget;

  std::map<std::pair<std::size_t, std::size_t>, HeadCache> caches;
  auto cache_of = [&](std::size_t layer, std::size_t head) -> HeadCache& {
    auto key = std::make_pair(layer, head);
    auto it = caches.find(key);
    if (it == caches.end()) {
      it = caches
               .emplace(key, HeadCache(layer, head, base_budget, cfg.sink_count,
                                       cfg.history_window, cfg.norm_order))
               .first;
    }
    return it->second;
  };

  std::size_t i = 0;
  std::size_t prev_step = 0;
  bool first_group = true;
  while (i < trace.records.size()) {
    const std::size_t step = trace.records[i].step;
    if (!first_group && step <= prev_step) {
      throw InvalidTrace("record for step " + std::to_string(step) + " after step " +
                         std::to_string(prev_step));
    }
    first_group = false;
    std::size_t group_end = i;
    std::map<std::pair<std::size_t, std::size_t>, bool> seen;
    while (group_end < trace.records.size() && trace.records[group_end].step == step) {
      const TraceRecord& rec = trace.records[group_end];
      if (seen[{rec.layer, rec.head}]) {
        throw InvalidTrace("duplicate record for step " + std::to_string(step) + " layer " +
                           std::to_string(rec.layer) + " head " + std::to_string(rec.head));
      }
      seen[{rec.layer, rec.head}] = true;
      ++group_end;
    }

    for (std::size_t j = i; j < group_end; ++j) {
      const TraceRecord& rec = trace.records[j];
      HeadCache& cache = cache_of(rec.layer, rec.head);
      cache.append_scored(rec.position, rec.value_dim, rec.value_norm);
      if (rec.attention_row.size() == cache.size()) {
        cache.record_attention(rec.attention_row, cfg.history_window);
      } else if (rec.attention_row.size() == rec.position + 1) {
        // full lower-triangular row over positions 0..position
        std::vector<double> projected;
        projected.reserve(cache.size());
        for (const TokenSlot& slot : cache.slots()) projected.push_back(rec.attention_row[slot.position]);
        cache.record_attention(Vec64(std::move(projected)), cfg.history_window);
      } else {
        throw InvalidTrace("step " + std::to_string(step) + " layer " + std::to_string(rec.layer) +
                           " head " + std::to_string(rec.head) + ": row length " +
                           std::to_string(rec.attention_row.size()) +
                           " matches neither the replay cache nor a full row");
      }
    }

    const bool enforce_due = step + 1 >= prefill_len;
    for (auto& [key, cache] : caches) {
      ReplayStepInfo info;
      info.step = step;
      info.layer = key.first;
      info.head = key.second;
      info.importance = policy_scores(cache, cfg);
      if (enforce_due) {
        cache.set_budget(budget_at_step(base_budget, prefill_len, step));
        EvictionReport ev = enforce_budget(cache, cfg);
        info.evicted = ev.evicted;
        report.evictions += ev;
      }
      info.retained = cache.positions();
      report.steps.push_back(std::move(info));
    }
    ++report.steps_replayed;
    prev_step = step;
    i = group_end;
  }
  return report;
}

// Synthetic single-head trace with attention-sink structure: the configured
// sink positions absorb a fixed share of every row (split equally) while
// carrying a near-zero value norm; the remaining mass is spread over the
// other positions by seeded draw.
struct SyntheticTraceSpec {
  std::size_t length = 32;
  std::vector<std::size_t> sink_positions = {0, 1};
  double sink_attention_mass = 0.8;
  double sink_value_norm = 0.0;
  double background_norm_lo = 0.5;
  double background_norm_hi = 2.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (length == 0) throw InvalidSpec("length must be >= 1");
    if (sink_positions.empty()) throw InvalidSpec("at least one sink position required");
    if (!(sink_attention_mass > 0.0) || !(sink_attention_mass < 1.0)) {
      throw InvalidSpec("sink_attention_mass must be in (0, 1)");
    }
    if (!(sink_value_norm >= 0.0)) throw InvalidSpec("sink_value_norm must be >= 0");
    if (background_norm_lo > background_norm_hi || background_norm_lo < 0.0) {
      throw InvalidSpec("background norm range must satisfy 0 <= lo <= hi");
    }
  }
};

inline Trace synthesize(const SyntheticTraceSpec& spec) {
  spec.validate();
  Xorshift64Star rng(spec.seed);
  auto is_sink = [&](std::size_t pos) {
    for (std::size_t s : spec.sink_positions) {
      if (s == pos) return true;
    }
    return false;
  };

  Trace trace;
  trace.prefill_len = spec.length;
  trace.records.reserve(spec.length);
  for (std::size_t t = 0; t < spec.length; ++t) {
    std::vector<std::size_t> sinks, others;
    for (std::size_t pos = 0; pos <= t; ++pos) {
      (is_sink(pos) ? sinks : others).push_back(pos);
    }
    double sink_share = sinks.empty() ? 0.0 : spec.sink_attention_mass;
    if (others.empty()) sink_share = 1.0;

    std::vector<double> row(t + 1, 0.0);
    for (std::size_t pos : sinks) row[pos] = sink_share / static_cast<double>(sinks.size());
    if (!others.empty()) {
      std::vector<double> weights(others.size());
      double total = 0.0;
      for (double& u : weights) {
        u = 0.05 + 0.95 * rng.next_unit();
        total += u;
      }
      for (std::size_t j = 0; j < others.size(); ++j) {
        row[others[j]] = (1.0 - sink_share) * weights[j] / total;
      }
    }

    TraceRecord rec;
    rec.step = t;
    rec.layer = 0;
    rec.head = 0;
    rec.attention_row = Vec64(std::move(row));
    rec.position = t;
    rec.value_norm = is_sink(t) ? spec.sink_value_norm
                                : spec.background_norm_lo +
                                      (spec.background_norm_hi - spec.background_norm_lo) *
                                          rng.next_unit();
    rec.value_dim = 1;
    trace.records.push_back(std::move(rec));
  }
  return trace;
}

}  // namespace kvprune
