#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "kvprune/error.hpp"
#include "kvprune/kv_cache.hpp"
#include "kvprune/math.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/rng.hpp"
#include "kvprune/trace.hpp"

namespace kvprune {

// Sink-inducing initialization mode: the first two positions get a flat
// attention-logit bonus and near-zero value projections, and every other
// token's value vector is rescaled by a per-token factor so value norms are
// strongly non-uniform. Used by the synthetic acceptance scenarios only.
inline constexpr std::size_t kSinkBiasPositions = 2;
inline constexpr double kSinkLogitBonus = 6.0;
inline constexpr double kSinkValueScale = 0.02;
inline constexpr double kSinkModeNormSpread = 1.5;  // scale = exp(U(-spread, spread))

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 32;
  std::size_t d_head = 8;
  std::size_t vocab_size = 64;
  std::uint64_t seed = 1;
  bool sink_bias = false;

  void validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1) {
      throw InvalidConfig("model dimensions must be >= 1");
    }
    if (vocab_size < 2) throw InvalidConfig("vocab_size must be >= 2");
    if (d_model != n_heads * d_head) {
      throw InvalidConfig("d_model (" + std::to_string(d_model) + ") != n_heads * d_head (" +
                          std::to_string(n_heads * d_head) + ")");
    }
  }
};

struct HeadWeights {
  Mat64 wq, wk, wv;  // each d_head x d_model
};

struct LayerWeights {
  std::vector<HeadWeights> heads;
  Mat64 wo;  // d_model x d_model
  Mat64 w1;  // d_ff x d_model
  Mat64 w2;  // d_model x d_ff
};

// Pre-norm residual decoder block: attention then a tanh MLP, absolute
// sinusoidal position encoding added to the embedding. Weights are drawn
// from xorshift64* (uniform [-1,1) scaled by 1/sqrt(d_model)) in a fixed
// order, so a (config, seed) pair reproduces the model bit-for-bit.
class DecoderState {
 public:
  static DecoderState build(const ModelConfig& cfg) {
    cfg.validate();
    DecoderState model;
    model.cfg_ = cfg;
    Xorshift64Star rng(cfg.seed);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    auto draw = [&](std::size_t rows, std::size_t cols) {
      std::vector<double> data(rows * cols);
      for (double& x : data) x = scale * rng.next_symmetric();
      return Mat64(rows, cols, std::move(data));
    };
    model.embedding_ = draw(cfg.vocab_size, cfg.d_model);
    model.unembedding_ = draw(cfg.vocab_size, cfg.d_model);
    const std::size_t d_ff = 2 * cfg.d_model;
    model.layers_.reserve(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      LayerWeights layer;
      layer.heads.reserve(cfg.n_heads);
      for (std::size_t h = 0; h < cfg.n_heads; ++h) {
        HeadWeights head;
        head.wq = draw(cfg.d_head, cfg.d_model);
        head.wk = draw(cfg.d_head, cfg.d_model);
        head.wv = draw(cfg.d_head, cfg.d_model);
        layer.heads.push_back(std::move(head));
      }
      layer.wo = draw(cfg.d_model, cfg.d_model);
      layer.w1 = draw(d_ff, cfg.d_model);
      layer.w2 = draw(cfg.d_model, d_ff);
      model.layers_.push_back(std::move(layer));
    }
    return model;
  }

  const ModelConfig& config() const { return cfg_; }
  const Mat64& embedding() const { return embedding_; }
  const Mat64& unembedding() const { return unembedding_; }
  const std::vector<LayerWeights>& layers() const { return layers_; }

  // FNV-1a over all weight bytes in generation order.
  std::uint64_t weight_checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const Mat64& m) {
      for (double x : m.data()) {
        std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
        for (int b = 0; b < 8; ++b) {
          h ^= (bits >> (8 * b)) & 0xff;
          h *= 0x100000001b3ULL;
        }
      }
    };
    feed(embedding_);
    feed(unembedding_);
    for (const LayerWeights& layer : layers_) {
      for (const HeadWeights& head : layer.heads) {
        feed(head.wq);
        feed(head.wk);
        feed(head.wv);
      }
      feed(layer.wo);
      feed(layer.w1);
      feed(layer.w2);
    }
    return h;
  }

 private:
  ModelConfig cfg_;
  Mat64 embedding_, unembedding_;
  std::vector<LayerWeights> layers_;
};

inline Vec64 position_encoding(std::size_t position, std::size_t d_model) {
  std::vector<double> pe(d_model);
  for (std::size_t i = 0; i < d_model; ++i) {
    const double exponent = static_cast<double>(i - (i % 2)) / static_cast<double>(d_model);
    const double angle = static_cast<double>(position) / std::pow(10000.0, exponent);
    pe[i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
  }
  return Vec64(std::move(pe));
}

inline Vec64 rms_norm(const Vec64& x) {
  double mean_sq = 0.0;
  for (double v : x) mean_sq += v * v;
  mean_sq /= static_cast<double>(x.size());
  const double inv = 1.0 / std::sqrt(mean_sq + 1e-8);
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * inv;
  return Vec64(std::move(out));
}

// Per-token value rescaling in sink-bias mode (1.0 otherwise).
inline double sink_mode_value_scale(const ModelConfig& cfg, std::size_t layer, std::size_t head,
                                    std::size_t position) {
  if (!cfg.sink_bias) return 1.0;
  if (position < kSinkBiasPositions) return kSinkValueScale;
  const std::uint64_t key = mix64(cfg.seed ^ 0x76616c73ULL) ^ (static_cast<std::uint64_t>(layer) << 40) ^
                            (static_cast<std::uint64_t>(head) << 20) ^ position;
  return std::exp(kSinkModeNormSpread * (2.0 * unit_from_key(key) - 1.0));
}

// All per-head caches of one generation run.
class CacheSet {
 public:
  CacheSet(const ModelConfig& model, const PolicyConfig& policy, std::size_t budget) {
    caches_.reserve(model.n_layers);
    for (std::size_t l = 0; l < model.n_layers; ++l) {
      std::vector<HeadCache> row;
      row.reserve(model.n_heads);
      for (std::size_t h = 0; h < model.n_heads; ++h) {
        row.emplace_back(l, h, budget, policy.sink_count, policy.history_window,
                         policy.norm_order);
      }
      caches_.push_back(std::move(row));
    }
  }

  HeadCache& at(std::size_t layer, std::size_t head) { return caches_[layer][head]; }
  const HeadCache& at(std::size_t layer, std::size_t head) const { return caches_[layer][head]; }
  std::size_t n_layers() const { return caches_.size(); }
  std::size_t n_heads() const { return caches_.empty() ? 0 : caches_[0].size(); }
  std::size_t tokens_seen() const { return caches_[0][0].tokens_seen(); }
  bool empty() const { return caches_[0][0].size() == 0 && tokens_seen() == 0; }

  void set_budget_all(std::size_t budget) {
    for (auto& row : caches_) {
      for (HeadCache& cache : row) cache.set_budget(budget);
    }
  }

  EvictionReport enforce_all(const PolicyConfig& cfg) {
    EvictionReport total;
    for (auto& row : caches_) {
      for (HeadCache& cache : row) total += enforce_budget(cache, cfg);
    }
    return total;
  }

  MemoryUsage usage() const {
    MemoryUsage total;
    for (const auto& row : caches_) {
      for (const HeadCache& cache : row) {
        MemoryUsage u = cache.memory_accounting();
        total.kv_bytes += u.kv_bytes;
        total.aux_bytes += u.aux_bytes;
        total.window_bytes += u.window_bytes;
      }
    }
    return total;
  }

  std::pair<std::size_t, std::size_t> slot_count_range() const {
    std::size_t lo = caches_[0][0].size(), hi = lo;
    for (const auto& row : caches_) {
      for (const HeadCache& cache : row) {
        lo = std::min(lo, cache.size());
        hi = std::max(hi, cache.size());
      }
    }
    return {lo, hi};
  }

 private:
  std::vector<std::vector<HeadCache>> caches_;
};

struct HeadStep {
  Vec64 query;
  Vec64 key;
  Vec64 value;
  Vec64 attention_row;  // over retained slots + the new slot
  Vec64 attended;       // attention-weighted value sum
};

struct StepOutput {
  std::size_t position = 0;
  std::vector<std::vector<HeadStep>> heads;  // [layer][head]
  Vec64 logits;
};

struct AttendResult {
  Vec64 row;
  Vec64 output;
};

// Causal attention of one query over the cache's current slots.
inline AttendResult attend(const HeadCache& cache, const Vec64& query, bool sink_bias = false) {
  if (cache.size() == 0) throw InvalidInput("attend: empty cache");
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(query.size()));
  std::vector<double> logits(cache.size());
  for (std::size_t i = 0; i < cache.size(); ++i) {
    const TokenSlot& slot = cache.slots()[i];
    logits[i] = dot(query, slot.key) * inv_sqrt_d;
    if (sink_bias && slot.position < kSinkBiasPositions) logits[i] += kSinkLogitBonus;
  }
  AttendResult result;
  result.row = stable_softmax(Vec64(std::move(logits)));
  std::vector<double> out(query.size(), 0.0);
  for (std::size_t i = 0; i < cache.size(); ++i) {
    add_scaled(out, result.row[i], cache.slots()[i].value);
  }
  result.output = Vec64(std::move(out));
  return result;
}

// One forward pass: appends the token's k/v to every head cache, attends over
// the retained slots, and returns per-head internals plus next-token logits.
inline StepOutput decode_step(const DecoderState& model, std::size_t token, CacheSet& caches) {
  const ModelConfig& cfg = model.config();
  if (token >= cfg.vocab_size) {
    throw InvalidInput("token id " + std::to_string(token) + " >= vocab_size " +
                       std::to_string(cfg.vocab_size));
  }
  const std::size_t position = caches.tokens_seen();

  StepOutput out;
  out.position = position;
  out.heads.resize(cfg.n_layers);

  std::vector<double> x(cfg.d_model);
  {
    auto row = model.embedding().row(token);
    Vec64 pe = position_encoding(position, cfg.d_model);
    for (std::size_t i = 0; i < cfg.d_model; ++i) x[i] = row[i] + pe[i];
  }

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& layer = model.layers()[l];
    Vec64 xn = rms_norm(Vec64(x));
    std::vector<double> concat(cfg.d_model, 0.0);
    out.heads[l].reserve(cfg.n_heads);
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      HeadCache& cache = caches.at(l, h);
      HeadStep hs;
      hs.query = matvec(layer.heads[h].wq, xn);
      hs.key = matvec(layer.heads[h].wk, xn);
      Vec64 value = matvec(layer.heads[h].wv, xn);
      const double vscale = sink_mode_value_scale(cfg, l, h, position);
      if (vscale != 1.0) {
        std::vector<double> scaled(value.size());
        for (std::size_t i = 0; i < value.size(); ++i) scaled[i] = vscale * value[i];
        value = Vec64(std::move(scaled));
      }
      hs.value = value;
      cache.append(position, hs.key, std::move(value), cache.norm_order());
      AttendResult ar = attend(cache, hs.query, cfg.sink_bias);
      cache.record_attention(ar.row, cache.history_window());
      hs.attention_row = ar.row;
      hs.attended = ar.output;
      for (std::size_t i = 0; i < cfg.d_head; ++i) concat[h * cfg.d_head + i] = ar.output[i];
      out.heads[l].push_back(std::move(hs));
    }
    Vec64 attn_out = matvec(layer.wo, Vec64(std::move(concat)));
    for (std::size_t i = 0; i < cfg.d_model; ++i) x[i] += attn_out[i];

    Vec64 xn2 = rms_norm(Vec64(x));
    Vec64 hidden = matvec(layer.w1, xn2);
    std::vector<double> activated(hidden.size());
    for (std::size_t i = 0; i < hidden.size(); ++i) activated[i] = std::tanh(hidden[i]);
    Vec64 mlp_out = matvec(layer.w2, Vec64(std::move(activated)));
    for (std::size_t i = 0; i < cfg.d_model; ++i) x[i] += mlp_out[i];
  }

  out.logits = matvec(model.unembedding(), rms_norm(Vec64(std::move(x))));
  return out;
}

// Processes the prompt causally; caches must be fresh. No pruning happens
// here: the first budget enforcement runs after prefill completes.
inline std::vector<StepOutput> prefill(const DecoderState& model, std::span<const std::size_t> prompt,
                                       CacheSet& caches) {
  if (prompt.empty()) throw InvalidInput("prefill: empty prompt");
  if (!caches.empty()) throw InvalidInput("prefill: caches already populated");
  std::vector<StepOutput> outputs;
  outputs.reserve(prompt.size());
  for (std::size_t token : prompt) outputs.push_back(decode_step(model, token, caches));
  return outputs;
}

// Greedy argmax; ties break toward the lowest token id.
inline std::size_t argmax_token(const Vec64& logits) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[best]) best = i;
  }
  return best;
}

struct GenerationOptions {
  bool collect_trace = false;
  bool collect_step_states = false;  // per-step importance + retained sets
};

struct GenerationResult {
  std::vector<std::size_t> tokens;
  // per decode step, per (layer * n_heads + head): attended output vector
  std::vector<std::vector<Vec64>> decode_attended;
  std::size_t base_budget = 0;
  std::size_t prompt_len = 0;
  MemoryUsage usage_pre_prune;   // at the end of prefill, before enforcement
  MemoryUsage usage_post_prune;  // right after the post-prefill prune
  MemoryUsage usage_final;
  std::size_t slots_post_prune_min = 0;
  std::size_t slots_post_prune_max = 0;
  EvictionReport evictions;
  Trace trace;                            // when collect_trace
  std::vector<ReplayStepInfo> step_states;  // when collect_step_states
};

namespace detail {

inline void collect_trace_records(Trace& trace, const StepOutput& out, const PolicyConfig& policy) {
  for (std::size_t l = 0; l < out.heads.size(); ++l) {
    for (std::size_t h = 0; h < out.heads[l].size(); ++h) {
      const HeadStep& hs = out.heads[l][h];
      TraceRecord rec;
      rec.step = out.position;
      rec.layer = l;
      rec.head = h;
      rec.attention_row = hs.attention_row;
      rec.position = out.position;
      rec.value_norm = lp_norm(hs.value, policy.norm_order);
      rec.value_dim = hs.value.size();
      trace.records.push_back(std::move(rec));
    }
  }
}

inline void collect_step_state(std::vector<ReplayStepInfo>& states, const CacheSet& caches,
                               const PolicyConfig& policy, std::size_t step,
                               std::vector<ImportanceVector>* importance_out) {
  for (std::size_t l = 0; l < caches.n_layers(); ++l) {
    for (std::size_t h = 0; h < caches.n_heads(); ++h) {
      ReplayStepInfo info;
      info.step = step;
      info.layer = l;
      info.head = h;
      if (importance_out) {
        info.importance = std::move((*importance_out)[l * caches.n_heads() + h]);
      } else {
        info.importance = policy_scores(caches.at(l, h), policy);
      }
      info.retained = caches.at(l, h).positions();
      states.push_back(std::move(info));
    }
  }
}

}  // namespace detail

// Closed-loop generation: prefill, prune to the budget, then greedy decoding
// with budget enforcement after every step (pruning decisions feed back into
// subsequent attention).
inline GenerationResult run_generation(const DecoderState& model,
                                       std::span<const std::size_t> prompt,
                                       const PolicyConfig& policy, std::size_t steps,
                                       const GenerationOptions& options = {}) {
  policy.validate();
  if (prompt.empty()) throw InvalidInput("run_generation: empty prompt");
  GenerationResult result;
  result.prompt_len = prompt.size();
  const std::size_t base_budget = derive_budget(policy, prompt.size());
  result.base_budget = base_budget;

  CacheSet caches(model.config(), policy, base_budget);
  if (options.collect_trace) result.trace.prefill_len = prompt.size();

  // prompt pass, token by token (see prefill); no pruning until it completes
  Vec64 logits;
  for (std::size_t t = 0; t < prompt.size(); ++t) {
    StepOutput out = decode_step(model, prompt[t], caches);
    if (options.collect_trace) detail::collect_trace_records(result.trace, out, policy);
    if (options.collect_step_states && t + 1 < prompt.size()) {
      detail::collect_step_state(result.step_states, caches, policy, t, nullptr);
    }
    if (t + 1 == prompt.size()) logits = std::move(out.logits);
  }

  auto enforce_step = [&](std::size_t position) {
    std::vector<ImportanceVector> importance;
    if (options.collect_step_states) {
      for (std::size_t l = 0; l < caches.n_layers(); ++l) {
        for (std::size_t h = 0; h < caches.n_heads(); ++h) {
          importance.push_back(policy_scores(caches.at(l, h), policy));
        }
      }
    }
    caches.set_budget_all(budget_at_step(base_budget, prompt.size(), position));
    result.evictions += caches.enforce_all(policy);
    if (options.collect_step_states) {
      detail::collect_step_state(result.step_states, caches, policy, position, &importance);
    }
  };

  result.usage_pre_prune = caches.usage();
  enforce_step(prompt.size() - 1);
  result.usage_post_prune = caches.usage();
  std::tie(result.slots_post_prune_min, result.slots_post_prune_max) = caches.slot_count_range();

  for (std::size_t g = 0; g < steps; ++g) {
    const std::size_t token = argmax_token(logits);
    result.tokens.push_back(token);
    StepOutput out = decode_step(model, token, caches);
    if (options.collect_trace) detail::collect_trace_records(result.trace, out, policy);

    std::vector<Vec64> attended;
    attended.reserve(caches.n_layers() * caches.n_heads());
    for (const auto& layer_heads : out.heads) {
      for (const HeadStep& hs : layer_heads) attended.push_back(hs.attended);
    }
    result.decode_attended.push_back(std::move(attended));

    enforce_step(out.position);
    logits = out.logits;
  }
  result.usage_final = caches.usage();
  return result;
}

struct RunComparison {
  double token_match_rate = 1.0;
  double attn_recon_error = 0.0;
  std::optional<std::size_t> divergence_step;
};

// Step-by-step comparison of a pruned run against the full-cache reference.
// attn_recon_error is the mean (over decode steps, layers, heads) l2 distance
// between per-head attention outputs.
inline RunComparison compare_generations(const GenerationResult& run,
                                         const GenerationResult& reference) {
  if (run.tokens.size() != reference.tokens.size()) {
    throw InvalidInput("compare_generations: step count mismatch");
  }
  RunComparison cmp;
  std::size_t matches = 0;
  for (std::size_t i = 0; i < run.tokens.size(); ++i) {
    if (run.tokens[i] == reference.tokens[i]) {
      ++matches;
    } else if (!cmp.divergence_step) {
      cmp.divergence_step = i;
    }
  }
  cmp.token_match_rate =
      run.tokens.empty() ? 1.0 : static_cast<double>(matches) / static_cast<double>(run.tokens.size());

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < run.decode_attended.size(); ++s) {
    for (std::size_t i = 0; i < run.decode_attended[s].size(); ++i) {
      const Vec64& a = run.decode_attended[s][i];
      const Vec64& b = reference.decode_attended[s][i];
      double sq = 0.0;
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double d = a[j] - b[j];
        sq += d * d;
      }
      total += std::sqrt(sq);
      ++count;
    }
  }
  cmp.attn_recon_error = count == 0 ? 0.0 : total / static_cast<double>(count);
  return cmp;
}

struct GenerateOutput {
  std::vector<std::size_t> tokens;
  RunComparison report;
  GenerationResult run;
};

// Generation plus divergence metrics against an internally run full-cache
// reference (the run itself when the policy is FullCache).
inline GenerateOutput generate(const DecoderState& model, std::span<const std::size_t> prompt,
                               const PolicyConfig& policy, std::size_t steps,
                               const GenerationOptions& options = {}) {
  GenerateOutput out;
  out.run = run_generation(model, prompt, policy, steps, options);
  if (policy.kind == PolicyKind::full_cache) {
    out.report = compare_generations(out.run, out.run);
  } else {
    PolicyConfig full;
    full.kind = PolicyKind::full_cache;
    full.budget_ratio = 1.0;
    full.norm_order = policy.norm_order;
    GenerationResult reference = run_generation(model, prompt, full, steps);
    out.report = compare_generations(out.run, reference);
  }
  out.tokens = out.run.tokens;
  return out;
}

}  // namespace kvprune
