#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kvprune/error.hpp"
#include "kvprune/math.hpp"

namespace kvprune {

// One cached token. `acc_score` is the attention mass the token has received
// over all recorded rows; `window_scores` keeps the per-row scores of the most
// recent rows (ring of capacity w) so windowed scores stay recomputable.
struct TokenSlot {
  std::size_t position = 0;
  Vec64 key;
  Vec64 value;
  std::size_t value_dim = 0;  // d_head; kept explicitly for norm-only slots
  double value_norm = 0.0;
  double acc_score = 0.0;
  std::deque<double> window_scores;
  bool is_sink = false;
};

struct MemoryUsage {
  std::uint64_t kv_bytes = 0;      // key + value payload
  std::uint64_t aux_bytes = 0;     // one value-norm scalar per slot
  std::uint64_t window_bytes = 0;  // history-window ring, reported separately
};

// Ordered per-head token store with budget accounting. Owned by exactly one
// generation run; never mutated concurrently.
class HeadCache {
 public:
  HeadCache(std::size_t layer, std::size_t head, std::size_t budget, std::size_t sink_count,
            std::size_t history_window, NormOrder norm_order)
      : layer_(layer),
        head_(head),
        budget_(budget),
        sink_count_(sink_count),
        history_window_(history_window),
        norm_order_(norm_order) {}

  // Appends a slot with its value norm precomputed under `p`. The slot handle
  // is the token's position (unique, stable across evictions).
  std::size_t append(std::size_t position, Vec64 key, Vec64 value, NormOrder p) {
    check_position(position);
    TokenSlot slot;
    slot.position = position;
    slot.value_dim = value.size();
    slot.value_norm = lp_norm(value, p);
    slot.key = std::move(key);
    slot.value = std::move(value);
    slot.is_sink = position < sink_count_;
    slots_.push_back(std::move(slot));
    ++tokens_seen_;
    return position;
  }

  std::size_t append(std::size_t position, Vec64 key, Vec64 value) {
    return append(position, std::move(key), std::move(value), norm_order_);
  }

  // Appends a slot whose value norm comes from an external source (trace
  // replay); no key/value payload is stored.
  std::size_t append_scored(std::size_t position, std::size_t value_dim, double value_norm) {
    check_position(position);
    if (!(value_norm >= 0.0) || !std::isfinite(value_norm)) {
      throw InvalidInput("append_scored: value_norm must be finite and >= 0");
    }
    TokenSlot slot;
    slot.position = position;
    slot.value_dim = value_dim;
    slot.value_norm = value_norm;
    slot.is_sink = position < sink_count_;
    slots_.push_back(std::move(slot));
    ++tokens_seen_;
    return position;
  }

  // Accumulates one attention row over the current slots. Rows from live
  // decoding sum to 1; open-loop replay may feed sub-probability rows (mass of
  // evicted positions dropped), so only an upper bound is enforced.
  void record_attention(const Vec64& row, std::size_t w) {
    if (row.size() != slots_.size()) {
      throw InvalidInput("record_attention: row length " + std::to_string(row.size()) +
                         " != slot count " + std::to_string(slots_.size()));
    }
    double sum = 0.0;
    for (double x : row) {
      if (x < 0.0) throw InvalidInput("record_attention: negative attention score");
      sum += x;
    }
    if (sum > 1.0 + 1e-9) {
      throw InvalidInput("record_attention: row mass " + std::to_string(sum) + " exceeds 1");
    }
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      TokenSlot& slot = slots_[i];
      slot.acc_score += row[i];
      slot.window_scores.push_back(row[i]);
      while (slot.window_scores.size() > w) slot.window_scores.pop_front();
    }
    ++rows_recorded_;
  }

  void record_attention(const Vec64& row) { record_attention(row, history_window_); }

  // Removes the given slots, preserving the relative order of survivors.
  // With `protect_sinks`, naming a sink slot is an error.
  void evict(std::span<const std::size_t> handles, bool protect_sinks = false) {
    std::vector<bool> marked(slots_.size(), false);
    for (std::size_t handle : handles) {
      bool found = false;
      for (std::size_t i = 0; i < slots_.size(); ++i) {
        if (slots_[i].position == handle) {
          if (protect_sinks && slots_[i].is_sink) {
            throw SinkProtected("evict: slot at position " + std::to_string(handle) +
                                " is a protected sink");
          }
          marked[i] = true;
          found = true;
          break;
        }
      }
      if (!found) {
        throw InvalidHandle("evict: no slot at position " + std::to_string(handle));
      }
    }
    std::vector<TokenSlot> survivors;
    survivors.reserve(slots_.size());
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (!marked[i]) survivors.push_back(std::move(slots_[i]));
    }
    slots_ = std::move(survivors);
  }

  // kv_bytes counts the key+value payload (2 * d_head f64 per slot), aux_bytes
  // the cached value-norm scalar. aux/kv = 1/(2*d_head) by construction. The
  // history-window ring is accounted separately and excluded from that ratio.
  MemoryUsage memory_accounting() const {
    MemoryUsage usage;
    for (const TokenSlot& slot : slots_) {
      usage.kv_bytes += 2ull * slot.value_dim * sizeof(double);
      usage.aux_bytes += sizeof(double);
      usage.window_bytes += slot.window_scores.size() * sizeof(double);
    }
    if (slots_.empty()) usage.aux_bytes = 0;
    return usage;
  }

  const std::vector<TokenSlot>& slots() const { return slots_; }
  std::size_t size() const { return slots_.size(); }

  std::vector<std::size_t> positions() const {
    std::vector<std::size_t> out;
    out.reserve(slots_.size());
    for (const TokenSlot& slot : slots_) out.push_back(slot.position);
    return out;
  }

  bool contains(std::size_t position) const {
    for (const TokenSlot& slot : slots_) {
      if (slot.position == position) return true;
    }
    return false;
  }

  std::size_t layer() const { return layer_; }
  std::size_t head() const { return head_; }
  std::size_t budget() const { return budget_; }
  void set_budget(std::size_t budget) { budget_ = budget; }
  std::size_t sink_count() const { return sink_count_; }
  std::size_t history_window() const { return history_window_; }
  NormOrder norm_order() const { return norm_order_; }
  std::size_t rows_recorded() const { return rows_recorded_; }
  std::size_t tokens_seen() const { return tokens_seen_; }

 private:
  void check_position(std::size_t position) const {
    if (!slots_.empty() && position <= slots_.back().position) {
      throw InvalidInput("append: position " + std::to_string(position) +
                         " not greater than last position " +
                         std::to_string(slots_.back().position));
    }
  }

  std::size_t layer_;
  std::size_t head_;
  std::size_t budget_;
  std::size_t sink_count_;
  std::size_t history_window_;
  NormOrder norm_order_;
  std::vector<TokenSlot> slots_;
  std::size_t rows_recorded_ = 0;
  std::size_t tokens_seen_ = 0;
};

}  // namespace kvprune
