#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "kvprune/error.hpp"
#include "kvprune/kv_cache.hpp"
#include "kvprune/math.hpp"

namespace kvprune {

enum class PolicyKind { full_cache, stream_llm, h2o, scissorhands };

inline std::string_view policy_kind_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::full_cache: return "full";
    case PolicyKind::stream_llm: return "stream";
    case PolicyKind::h2o: return "h2o";
    case PolicyKind::scissorhands: return "scissorhands";
  }
  return "?";
}

// Eviction policy identity plus all hyperparameters.
//   sink_count     F: leading positions force-kept by StreamLLM and by the
//                  value-aware variants.
//   local_window   most recent slots kept unconditionally (Scissorhands).
//   history_window w: number of recent attention rows in windowed scoring.
//   norm_order     p for the cached value norms.
struct PolicyConfig {
  PolicyKind kind = PolicyKind::h2o;
  bool vatp = false;
  double budget_ratio = 0.5;
  std::size_t sink_count = 20;
  std::size_t local_window = 10;
  std::size_t history_window = 400;
  NormOrder norm_order = NormOrder::l1;

  void validate() const {
    if (vatp && kind != PolicyKind::h2o && kind != PolicyKind::scissorhands) {
      throw InvalidConfig("vatp is only valid for h2o and scissorhands");
    }
    if (!(budget_ratio > 0.0) || budget_ratio > 1.0) {
      throw InvalidConfig("budget_ratio must be in (0, 1]");
    }
    if (history_window == 0) throw InvalidConfig("history_window must be >= 1");
    if (kind == PolicyKind::scissorhands && local_window == 0) {
      throw InvalidConfig("local_window must be >= 1 for scissorhands");
    }
  }

  std::string name() const {
    std::string n(policy_kind_name(kind));
    if (vatp) n += "+vatp";
    return n;
  }
};

// Parses "h2o", "scissorhands+vatp", ... into kind + vatp flag.
inline PolicyConfig parse_policy_name(std::string_view name) {
  PolicyConfig cfg;
  std::string_view base = name;
  if (name.size() > 5 && name.substr(name.size() - 5) == "+vatp") {
    cfg.vatp = true;
    base = name.substr(0, name.size() - 5);
  }
  if (base == "full") cfg.kind = PolicyKind::full_cache;
  else if (base == "stream") cfg.kind = PolicyKind::stream_llm;
  else if (base == "h2o") cfg.kind = PolicyKind::h2o;
  else if (base == "scissorhands") cfg.kind = PolicyKind::scissorhands;
  else throw InvalidConfig("unknown policy '" + std::string(name) + "'");
  cfg.validate();
  return cfg;
}

// Per-slot importance scores, aligned with cache slot order.
using ImportanceVector = std::vector<double>;

// Base budget: floor(ratio * prompt length), at least 1 slot.
inline std::size_t derive_budget(const PolicyConfig& cfg, std::size_t prompt_len) {
  auto k = static_cast<std::size_t>(cfg.budget_ratio * static_cast<double>(prompt_len));
  return std::max<std::size_t>(k, 1);
}

// The budget constrains the prompt-derived cache; every generated slot extends
// it one-for-one, so a full-ratio run never evicts. `step` is the 0-based
// position of the newest token, `prefill_len` the prompt length.
inline std::size_t budget_at_step(std::size_t base, std::size_t prefill_len, std::size_t step) {
  if (step + 1 <= prefill_len) return base;
  return base + (step + 1 - prefill_len);
}

// Accumulated attention mass per slot.
inline ImportanceVector score_h2o(const HeadCache& cache) {
  ImportanceVector scores;
  scores.reserve(cache.size());
  for (const TokenSlot& slot : cache.slots()) scores.push_back(slot.acc_score);
  return scores;
}

// Attention mass restricted to the w most recent rows (and to rows since the
// slot's creation). Summed oldest-to-newest for reproducibility.
inline ImportanceVector score_scissorhands(const HeadCache& cache) {
  ImportanceVector scores;
  scores.reserve(cache.size());
  for (const TokenSlot& slot : cache.slots()) {
    double s = 0.0;
    for (double x : slot.window_scores) s += x;
    scores.push_back(s);
  }
  return scores;
}

// Value-aware importance: attention score times the slot's cached value norm.
inline ImportanceVector apply_vatp(const ImportanceVector& scores, const HeadCache& cache) {
  if (scores.size() != cache.size()) {
    throw InvalidInput("apply_vatp: score count " + std::to_string(scores.size()) +
                       " != slot count " + std::to_string(cache.size()));
  }
  ImportanceVector out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = scores[i] * cache.slots()[i].value_norm;
  }
  return out;
}

inline ImportanceVector policy_scores(const HeadCache& cache, const PolicyConfig& cfg) {
  ImportanceVector scores;
  switch (cfg.kind) {
    case PolicyKind::full_cache:
    case PolicyKind::stream_llm:
      scores.assign(cache.size(), 0.0);  // positional policies ignore scores
      break;
    case PolicyKind::h2o:
      scores = score_h2o(cache);
      break;
    case PolicyKind::scissorhands:
      scores = score_scissorhands(cache);
      break;
  }
  if (cfg.vatp) scores = apply_vatp(scores, cache);
  return scores;
}

// How a retained set is composed for a given budget.
struct SelectionPlan {
  std::size_t target = 0;        // retained-set size cap (budget after clamping)
  std::size_t local_window = 0;  // unconditionally kept recent slots
  std::size_t forced_sinks = 0;  // leading positions kept unconditionally
  bool clamped = false;          // budget was raised to fit sinks + window
};

inline SelectionPlan selection_plan(const PolicyConfig& cfg, std::size_t budget) {
  SelectionPlan plan;
  switch (cfg.kind) {
    case PolicyKind::full_cache:
      plan.target = plan.local_window = static_cast<std::size_t>(-1);
      return plan;
    case PolicyKind::stream_llm:
      plan.local_window = budget > cfg.sink_count ? budget - cfg.sink_count : 1;
      break;
    case PolicyKind::h2o:
      plan.local_window = budget / 2;  // importance half + recency half
      break;
    case PolicyKind::scissorhands:
      plan.local_window = cfg.local_window;
      break;
  }
  if (cfg.vatp || cfg.kind == PolicyKind::stream_llm) plan.forced_sinks = cfg.sink_count;
  plan.target = budget;
  if (budget < plan.forced_sinks + plan.local_window) {
    plan.target = plan.forced_sinks + plan.local_window;
    plan.clamped = true;
  }
  return plan;
}

// Retained-set selection: forced sinks, then the local window, then the
// highest-scored remaining slots until the budget is filled. Score ties break
// toward higher position (recency). Returns retained handles in position
// order.
inline std::vector<std::size_t> select_retained(const ImportanceVector& scores,
                                                const HeadCache& cache,
                                                const PolicyConfig& cfg) {
  if (scores.size() != cache.size()) {
    throw InvalidInput("select_retained: score count != slot count");
  }
  const auto& slots = cache.slots();
  const std::size_t n = slots.size();
  SelectionPlan plan = selection_plan(cfg, cache.budget());
  if (plan.target >= n) {
    return cache.positions();
  }

  std::vector<bool> keep(n, false);
  std::size_t kept = 0;
  if (plan.forced_sinks > 0) {
    for (std::size_t i = 0; i < n; ++i) {
      if (slots[i].position < plan.forced_sinks && !keep[i]) {
        keep[i] = true;
        ++kept;
      }
    }
  }
  std::size_t window = std::min(plan.local_window, n);
  for (std::size_t i = n - window; i < n; ++i) {
    if (!keep[i]) {
      keep[i] = true;
      ++kept;
    }
  }

  if (kept < plan.target) {
    std::vector<std::size_t> rest;
    rest.reserve(n - kept);
    for (std::size_t i = 0; i < n; ++i) {
      if (!keep[i]) rest.push_back(i);
    }
    std::sort(rest.begin(), rest.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return slots[a].position > slots[b].position;
    });
    for (std::size_t i : rest) {
      if (kept == plan.target) break;
      keep[i] = true;
      ++kept;
    }
  }

  std::vector<std::size_t> retained;
  retained.reserve(kept);
  for (std::size_t i = 0; i < n; ++i) {
    if (keep[i]) retained.push_back(slots[i].position);
  }
  return retained;
}

struct EvictionReport {
  std::size_t evicted = 0;
  std::size_t sink_evictions = 0;  // evicted slots with position < F
  bool budget_clamped = false;

  EvictionReport& operator+=(const EvictionReport& other) {
    evicted += other.evicted;
    sink_evictions += other.sink_evictions;
    budget_clamped = budget_clamped || other.budget_clamped;
    return *this;
  }
};

// Scores the cache per the policy, selects the retained set and evicts the
// complement. Idempotent once the cache fits the budget.
inline EvictionReport enforce_budget(HeadCache& cache, const PolicyConfig& cfg) {
  EvictionReport report;
  if (cfg.kind == PolicyKind::full_cache) return report;

  ImportanceVector scores = policy_scores(cache, cfg);
  report.budget_clamped = selection_plan(cfg, cache.budget()).clamped;
  std::vector<std::size_t> retained = select_retained(scores, cache, cfg);

  std::vector<std::size_t> doomed;
  doomed.reserve(cache.size() - retained.size());
  std::size_t next_retained = 0;
  for (const TokenSlot& slot : cache.slots()) {
    if (next_retained < retained.size() && retained[next_retained] == slot.position) {
      ++next_retained;
      continue;
    }
    doomed.push_back(slot.position);
    if (slot.is_sink) ++report.sink_evictions;
  }
  const bool protect_sinks = cfg.vatp || cfg.kind == PolicyKind::stream_llm;
  cache.evict(doomed, protect_sinks);
  report.evicted = doomed.size();
  return report;
}

}  // namespace kvprune
