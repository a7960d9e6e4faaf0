// Acceptance suite: one criterion per test, one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <vector>

#include "gtest/gtest.h"
#include "kvprune/decoder.hpp"
#include "kvprune/harness.hpp"
#include "kvprune/policy.hpp"
#include "kvprune/trace.hpp"

namespace {

using namespace kvprune;

struct Criterion {
  const char* label;
  explicit Criterion(const char* l) : label(l) {}
  ~Criterion() {
    std::printf("[CRITERION] %s: %s\n", label,
                ::testing::Test::HasFailure() ? "FAIL" : "PASS");
    std::fflush(stdout);
  }
};

// Default desk preset: completes in seconds on one core.
ExperimentConfig desk_preset() {
  ExperimentConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 4;
  cfg.model.d_model = 32;
  cfg.model.d_head = 8;
  cfg.model.vocab_size = 64;
  cfg.model.seed = 1;
  cfg.prompt_len = 256;
  cfg.gen_steps = 64;
  cfg.repeats = 20;
  cfg.budget_ratios = {0.25, 0.5, 0.75, 1.0};
  for (const char* name : {"full", "stream", "h2o", "h2o+vatp", "scissorhands",
                           "scissorhands+vatp"}) {
    cfg.policies.push_back(parse_policy_name(name));
  }
  return cfg;
}

// Shared by criteria 7 and 10.
const ExperimentReport& desk_sweep_report(double* elapsed_seconds = nullptr) {
  static double elapsed = 0.0;
  static const ExperimentReport report = [] {
    auto start = std::chrono::steady_clock::now();
    ExperimentReport r = run_sweep(desk_preset());
    elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return r;
  }();
  if (elapsed_seconds) *elapsed_seconds = elapsed;
  return report;
}

// C1: value-aware importance equals S * ||v||_1 from an independent naive
// routine, exactly, over 1000 random instances, in under a second.
TEST(Acceptance, C01_VatpProductOracle) {
  Criterion c("C1 value-aware score == S * l1(v), 1000 random instances, exact");
  Xorshift64Star rng(101);
  auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 48;
    const std::size_t dim = 1 + rng.next_u64() % 16;
    HeadCache cache(0, 0, n, 0, 4, NormOrder::l1);
    std::vector<double> scores;
    std::vector<std::vector<double>> raw_values;
    for (std::size_t pos = 0; pos < n; ++pos) {
      std::vector<double> v(dim);
      for (auto& x : v) x = 10.0 * rng.next_symmetric();
      raw_values.push_back(v);
      cache.append(pos, Vec64({1.0}), Vec64(v), NormOrder::l1);
      scores.push_back(5.0 * rng.next_unit());
    }
    ImportanceVector got = apply_vatp(scores, cache);
    for (std::size_t k = 0; k < n; ++k) {
      double norm = 0.0;
      for (double x : raw_values[k]) norm += std::fabs(x);
      ASSERT_EQ(got[k], scores[k] * norm);
    }
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  EXPECT_LT(secs, 1.0);
}

// C2: accumulated and windowed scores match brute-force recomputation from
// the stored rows after 200 synthetic steps; a window covering all history
// equals the accumulated score exactly.
TEST(Acceptance, C02_ScoreRecomputationOracle) {
  Criterion c("C2 accumulated/windowed scores vs brute force, 200 synthetic steps");
  SyntheticTraceSpec spec;
  spec.length = 200;
  spec.seed = 7;
  Trace trace = synthesize(spec);

  for (std::size_t w : {std::size_t{40}, std::size_t{400}}) {
    HeadCache cache(0, 0, 1024, 2, w, NormOrder::l1);
    std::vector<Vec64> rows;
    for (const TraceRecord& rec : trace.records) {
      cache.append_scored(rec.position, rec.value_dim, rec.value_norm);
      cache.record_attention(rec.attention_row, w);
      rows.push_back(rec.attention_row);
    }
    const std::size_t total = rows.size();
    ImportanceVector acc = score_h2o(cache);
    ImportanceVector win = score_scissorhands(cache);
    for (std::size_t k = 0; k < cache.size(); ++k) {
      double acc_expected = 0.0;
      for (std::size_t j = k; j < total; ++j) acc_expected += rows[j][k];
      EXPECT_NEAR(acc[k], acc_expected, 1e-9);

      // window lower bound: max(t - w, k), i.e. the w most recent rows
      std::size_t lo = total > w ? total - w : 0;
      lo = std::max(lo, k);
      double win_expected = 0.0;
      for (std::size_t j = lo; j < total; ++j) win_expected += rows[j][k];
      EXPECT_NEAR(win[k], win_expected, 1e-9);
    }
    if (w >= total) {
      for (std::size_t k = 0; k < cache.size(); ++k) EXPECT_EQ(win[k], acc[k]);
    }
  }
}

// C3: at budget ratio 1.0 every policy generates the full-cache token
// sequence, across 20 seeds of the default preset, zero tolerance.
TEST(Acceptance, C03_FullBudgetEquivalence) {
  Criterion c("C3 ratio-1.0 token sequences identical to full cache, 20 seeds");
  ExperimentConfig preset = desk_preset();
  PolicyConfig full = parse_policy_name("full");
  for (std::size_t r = 0; r < preset.repeats; ++r) {
    ModelConfig m = preset.model;
    m.seed = preset.model.seed + r;
    DecoderState model = DecoderState::build(m);
    auto prompt = random_prompt(preset.prompt_len, m.vocab_size, m.seed);
    GenerationResult reference = run_generation(model, prompt, full, preset.gen_steps);
    for (const PolicyConfig& base : preset.policies) {
      if (base.kind == PolicyKind::full_cache) continue;
      PolicyConfig policy = base;
      policy.budget_ratio = 1.0;
      GenerationResult run = run_generation(model, prompt, policy, preset.gen_steps);
      ASSERT_EQ(run.tokens, reference.tokens) << policy.name() << " seed " << m.seed;
    }
  }
}

// C4: retained-set selection equals a naive sort-based reference on 1000
// random instances including score ties, zero mismatches.
TEST(Acceptance, C04_SelectionOracle) {
  Criterion c("C4 select_retained vs sort-based reference, 1000 instances with ties");
  Xorshift64Star rng(104);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.next_u64() % 64;
    const std::size_t budget = 1 + rng.next_u64() % 64;
    PolicyConfig cfg;
    switch (rng.next_u64() % 3) {
      case 0: cfg.kind = PolicyKind::h2o; break;
      case 1: cfg.kind = PolicyKind::scissorhands; break;
      default: cfg.kind = PolicyKind::stream_llm; break;
    }
    if (cfg.kind != PolicyKind::stream_llm) cfg.vatp = rng.next_u64() % 2 == 0;
    cfg.sink_count = rng.next_u64() % 6;
    cfg.local_window = 1 + rng.next_u64() % 8;

    HeadCache cache(0, 0, budget, cfg.sink_count, 4, NormOrder::l1);
    ImportanceVector scores;
    for (std::size_t pos = 0; pos < n; ++pos) {
      cache.append_scored(pos, 4, 1.0);
      scores.push_back(static_cast<double>(rng.next_u64() % 4));  // ties guaranteed
    }

    // reference: rank every slot by (score desc, position desc), then compose
    // sinks + window + best-ranked remainder
    std::size_t local = 0;
    switch (cfg.kind) {
      case PolicyKind::full_cache: break;
      case PolicyKind::stream_llm:
        local = budget > cfg.sink_count ? budget - cfg.sink_count : 1;
        break;
      case PolicyKind::h2o: local = budget / 2; break;
      case PolicyKind::scissorhands: local = cfg.local_window; break;
    }
    const std::size_t forced = (cfg.vatp || cfg.kind == PolicyKind::stream_llm) ? cfg.sink_count : 0;
    const std::size_t target = std::max(budget, forced + local);
    std::vector<std::size_t> expected;
    if (target >= n) {
      expected = cache.positions();
    } else {
      std::vector<bool> keep(n, false);
      std::size_t kept = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (forced > 0 && i < forced && !keep[i]) { keep[i] = true; ++kept; }
      }
      for (std::size_t i = n - std::min(local, n); i < n; ++i) {
        if (!keep[i]) { keep[i] = true; ++kept; }
      }
      std::vector<std::size_t> rank(n);
      for (std::size_t i = 0; i < n; ++i) rank[i] = i;
      std::sort(rank.begin(), rank.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a > b;
      });
      for (std::size_t i : rank) {
        if (kept >= target) break;
        if (!keep[i]) { keep[i] = true; ++kept; }
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) expected.push_back(i);
      }
    }
    if (select_retained(scores, cache, cfg) != expected) ++mismatches;
  }
  EXPECT_EQ(mismatches, 0u);
}

// C5: with value-aware pruning enabled no slot below the sink threshold is
// ever evicted, across a sink-heavy sweep.
TEST(Acceptance, C05_SinkSafetyAcrossSweep) {
  Criterion c("C5 no sink eviction under value-aware pruning, full sweep");
  ExperimentConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 2;
  cfg.model.d_model = 16;
  cfg.model.d_head = 8;
  cfg.model.vocab_size = 64;
  cfg.model.seed = 500;
  cfg.model.sink_bias = true;
  cfg.prompt_len = 128;
  cfg.gen_steps = 16;
  cfg.repeats = 6;
  cfg.budget_ratios = {0.25, 0.5, 0.75};
  for (const char* name : {"stream", "h2o+vatp", "scissorhands+vatp"}) {
    cfg.policies.push_back(parse_policy_name(name));
  }
  ExperimentReport report = run_sweep(cfg);
  ASSERT_EQ(report.rows.size(), 3u * 3u * 6u);
  std::size_t counter = 0;
  for (const RunMetrics& row : report.rows) counter += row.sink_evictions;
  EXPECT_EQ(counter, 0u);
}

// C6: scaling every value vector in a head by c > 0 leaves the value-aware
// retained set unchanged.
TEST(Acceptance, C06_ScaleInvariance) {
  Criterion c("C6 retained set invariant under value scaling c in {0.5, 3, 100}");
  Xorshift64Star rng(106);
  for (double scale : {0.5, 3.0, 100.0}) {
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 8 + rng.next_u64() % 56;
      const std::size_t budget = 1 + rng.next_u64() % n;
      PolicyConfig cfg = parse_policy_name(trial % 2 == 0 ? "h2o+vatp" : "scissorhands+vatp");
      cfg.sink_count = 2;
      cfg.local_window = 3;
      HeadCache plain(0, 0, budget, 2, 8, NormOrder::l1);
      HeadCache scaled(0, 0, budget, 2, 8, NormOrder::l1);
      ImportanceVector attn;
      for (std::size_t pos = 0; pos < n; ++pos) {
        std::vector<double> v(6);
        for (auto& x : v) x = rng.next_symmetric();
        std::vector<double> vs(v);
        for (auto& x : vs) x *= scale;
        plain.append(pos, Vec64({1.0}), Vec64(v), NormOrder::l1);
        scaled.append(pos, Vec64({1.0}), Vec64(vs), NormOrder::l1);
        attn.push_back(rng.next_unit());
      }
      auto a = select_retained(apply_vatp(attn, plain), plain, cfg);
      auto b = select_retained(apply_vatp(attn, scaled), scaled, cfg);
      ASSERT_EQ(a, b) << "c=" << scale;
    }
  }
}

// C7: mean reconstruction error is non-increasing in the budget ratio for
// every policy, exactly zero at ratio 1.0, within the runtime budget.
TEST(Acceptance, C07_BudgetDegradationMonotonicity) {
  Criterion c("C7 mean recon error non-increasing in ratio, 0 at ratio 1.0, < 2 min");
  double elapsed = 0.0;
  const ExperimentReport& report = desk_sweep_report(&elapsed);
  EXPECT_LT(elapsed, 120.0);

  ExperimentConfig preset = desk_preset();
  for (const PolicyConfig& policy : preset.policies) {
    std::vector<double> means;
    for (double ratio : preset.budget_ratios) {
      double total = 0.0;
      std::size_t count = 0;
      for (const RunMetrics& row : report.rows) {
        if (row.policy == policy_kind_name(policy.kind) && row.vatp == policy.vatp &&
            row.ratio == ratio) {
          total += row.attn_recon_error;
          ++count;
        }
      }
      ASSERT_EQ(count, preset.repeats);
      means.push_back(total / static_cast<double>(count));
    }
    for (std::size_t i = 1; i < means.size(); ++i) {
      EXPECT_LE(means[i], means[i - 1]) << policy.name() << " ratio step " << i;
    }
    EXPECT_EQ(means.back(), 0.0) << policy.name();
  }
}

// C8: in sink-inducing mode the measured attention/value-norm contrast
// reproduces: sinks soak >5x the attention share at <0.2x the value norm.
TEST(Acceptance, C08_SinkContrast) {
  Criterion c("C8 sink attention share > 5x non-sink, sink norms < 0.2x non-sink");
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_model = 32;
  cfg.d_head = 8;
  cfg.vocab_size = 64;
  cfg.seed = 800;
  cfg.sink_bias = true;
  DecoderState model = DecoderState::build(cfg);
  PolicyConfig full = parse_policy_name("full");
  CacheSet caches(cfg, full, 1);
  auto prompt = random_prompt(128, cfg.vocab_size, cfg.seed);
  auto outputs = prefill(model, prompt, caches);

  double sink_share = 0.0, other_share = 0.0;
  std::size_t sink_n = 0, other_n = 0;
  for (std::size_t t = kSinkBiasPositions; t < outputs.size(); ++t) {
    for (const auto& layer : outputs[t].heads) {
      for (const HeadStep& hs : layer) {
        for (std::size_t i = 0; i <= t; ++i) {
          if (i < kSinkBiasPositions) {
            sink_share += hs.attention_row[i];
            ++sink_n;
          } else {
            other_share += hs.attention_row[i];
            ++other_n;
          }
        }
      }
    }
  }
  const double sink_mean_share = sink_share / static_cast<double>(sink_n);
  const double other_mean_share = other_share / static_cast<double>(other_n);
  EXPECT_GT(sink_mean_share, 5.0 * other_mean_share);

  double sink_norm = 0.0, other_norm = 0.0;
  std::size_t sink_cnt = 0, other_cnt = 0;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (const TokenSlot& slot : caches.at(l, h).slots()) {
        if (slot.position < kSinkBiasPositions) {
          sink_norm += slot.value_norm;
          ++sink_cnt;
        } else {
          other_norm += slot.value_norm;
          ++other_cnt;
        }
      }
    }
  }
  EXPECT_LT(sink_norm / sink_cnt, 0.2 * (other_norm / other_cnt));
}

// C9: on the synthetic-sink scenario at 50% budget each value-aware variant
// beats its attention-only baseline on mean reconstruction error, every seed
// in favor.
TEST(Acceptance, C09_VatpAdvantageOnSinkScenario) {
  Criterion c("C9 value-aware variant beats baseline on sink scenario, 20/20 seeds");
  ExperimentConfig cfg;
  cfg.model.n_layers = 2;
  cfg.model.n_heads = 4;
  cfg.model.d_model = 32;
  cfg.model.d_head = 8;
  cfg.model.vocab_size = 64;
  cfg.model.seed = 900;
  cfg.model.sink_bias = true;
  cfg.prompt_len = 128;
  cfg.gen_steps = 32;
  cfg.repeats = 20;
  cfg.budget_ratios = {0.5};
  for (const char* name : {"h2o", "h2o+vatp", "scissorhands", "scissorhands+vatp"}) {
    cfg.policies.push_back(parse_policy_name(name));
  }
  ExperimentReport report = run_sweep(cfg);

  for (const char* baseline : {"h2o", "scissorhands"}) {
    double mean_base = 0.0, mean_vatp = 0.0;
    std::size_t in_favor = 0, pairs = 0;
    for (const RunMetrics& base : report.rows) {
      if (base.policy != baseline || base.vatp) continue;
      for (const RunMetrics& variant : report.rows) {
        if (variant.policy != baseline || !variant.vatp || variant.seed != base.seed) continue;
        ++pairs;
        mean_base += base.attn_recon_error;
        mean_vatp += variant.attn_recon_error;
        if (variant.attn_recon_error < base.attn_recon_error) ++in_favor;
      }
    }
    ASSERT_EQ(pairs, cfg.repeats) << baseline;
    EXPECT_LT(mean_vatp / pairs, mean_base / pairs) << baseline;
    EXPECT_EQ(in_favor, cfg.repeats) << baseline << ": sign test expects every seed in favor";
  }
}

// C10: value-norm bytes are exactly 1/(2 d_head) of KV bytes, and post- vs
// pre-prune cache size tracks the budget ratio within one slot per head, for
// every sweep cell.
TEST(Acceptance, C10_MemoryAccounting) {
  Criterion c("C10 aux/kv = 1/(2 d_head) exactly; post/pre slots track ratio per head");
  const ExperimentReport& report = desk_sweep_report();
  ASSERT_FALSE(report.rows.empty());
  for (const RunMetrics& row : report.rows) {
    EXPECT_EQ(row.aux_bytes * 2 * row.d_head, row.kv_bytes) << row.policy;
    const double target = row.effective_ratio * static_cast<double>(row.prompt_len);
    EXPECT_LE(std::fabs(static_cast<double>(row.slots_post_min) - target), 1.0)
        << row.policy << " ratio " << row.ratio;
    EXPECT_LE(std::fabs(static_cast<double>(row.slots_post_max) - target), 1.0)
        << row.policy << " ratio " << row.ratio;
  }
}

}  // namespace
