#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "kvprune/config.hpp"
#include "kvprune/decoder.hpp"
#include "kvprune/error.hpp"
#include "kvprune/policy.hpp"

namespace kvprune {

// One sweep: every listed policy crossed with every budget ratio, repeated
// over `repeats` seeds (model.seed, model.seed + 1, ...).
struct ExperimentConfig {
  ModelConfig model;
  std::size_t prompt_len = 256;
  std::size_t gen_steps = 64;
  std::size_t repeats = 20;
  std::vector<PolicyConfig> policies;
  std::vector<double> budget_ratios = {0.25, 0.5, 0.75, 1.0};
  std::string output_dir = "runs";

  void validate() const {
    model.validate();
    if (prompt_len < 1) throw InvalidConfig("prompt_len must be >= 1");
    if (repeats < 1) throw InvalidConfig("repeats must be >= 1");
    if (policies.empty()) throw InvalidConfig("at least one policy required");
    if (budget_ratios.empty()) throw InvalidConfig("at least one budget ratio required");
    for (double r : budget_ratios) {
      if (!(r > 0.0) || r > 1.0) throw InvalidConfig("budget ratios must be in (0, 1]");
    }
    for (const PolicyConfig& p : policies) p.validate();
  }
};

inline ExperimentConfig parse_experiment_config(const FlatConfig& cfg) {
  ExperimentConfig out;
  out.model = parse_model_config(cfg);
  out.prompt_len = cfg.get_count("prompt_len", out.prompt_len);
  out.gen_steps = cfg.get_count("gen_steps", out.gen_steps);
  out.repeats = cfg.get_count("repeats", out.repeats);
  out.output_dir = cfg.get_string("output_dir", out.output_dir);
  out.budget_ratios = cfg.get_double_list("budget_ratios", out.budget_ratios);
  std::vector<std::string> names = cfg.get_string_list(
      "policies", {"full", "stream", "h2o", "h2o+vatp", "scissorhands", "scissorhands+vatp"});
  out.policies.clear();
  for (const std::string& name : names) {
    out.policies.push_back(apply_policy_overrides(cfg, parse_policy_name(name)));
  }
  out.validate();
  return out;
}

// Per (policy, ratio, seed) metrics. kv/aux bytes are the totals right after
// the post-prompt prune; `*_pre` is the unpruned prompt cache for the same
// run.
struct RunMetrics {
  std::string policy;
  bool vatp = false;
  double ratio = 1.0;
  std::uint64_t seed = 0;
  double token_match_rate = 1.0;
  double attn_recon_error = 0.0;
  std::optional<std::size_t> divergence_step;
  std::uint64_t kv_bytes = 0;
  std::uint64_t aux_bytes = 0;
  std::uint64_t window_bytes = 0;
  std::uint64_t kv_bytes_pre = 0;
  std::size_t slots_post_min = 0;
  std::size_t slots_post_max = 0;
  std::size_t prompt_len = 0;
  std::size_t d_head = 0;
  std::size_t sink_evictions = 0;
  bool budget_clamped = false;
  // FullCache ignores the sweep ratio; its accounting reflects ratio 1
  double effective_ratio = 1.0;
};

struct ExperimentReport {
  std::vector<RunMetrics> rows;
};

inline std::vector<std::size_t> random_prompt(std::size_t len, std::size_t vocab,
                                              std::uint64_t seed) {
  Xorshift64Star rng(seed ^ 0x70726f6d7074ULL);
  std::vector<std::size_t> prompt(len);
  for (auto& t : prompt) t = rng.next_u64() % vocab;
  return prompt;
}

// Shortest-exact decimal form (round-trips the double).
inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return std::string(buf);
}

inline RunMetrics make_run_metrics(const PolicyConfig& policy, double ratio, std::uint64_t seed,
                                   const GenerationResult& run, const RunComparison& cmp,
                                   std::size_t d_head) {
  RunMetrics row;
  row.policy = std::string(policy_kind_name(policy.kind));
  row.vatp = policy.vatp;
  row.ratio = ratio;
  row.seed = seed;
  row.token_match_rate = cmp.token_match_rate;
  row.attn_recon_error = cmp.attn_recon_error;
  row.divergence_step = cmp.divergence_step;
  row.kv_bytes = run.usage_post_prune.kv_bytes;
  row.aux_bytes = run.usage_post_prune.aux_bytes;
  row.window_bytes = run.usage_post_prune.window_bytes;
  row.kv_bytes_pre = run.usage_pre_prune.kv_bytes;
  row.slots_post_min = run.slots_post_prune_min;
  row.slots_post_max = run.slots_post_prune_max;
  row.prompt_len = run.prompt_len;
  row.d_head = d_head;
  row.sink_evictions = run.evictions.sink_evictions;
  row.budget_clamped = run.evictions.budget_clamped;
  row.effective_ratio = policy.kind == PolicyKind::full_cache ? 1.0 : ratio;
  return row;
}

// Runs the full grid. One full-cache reference per seed is shared by every
// policy and ratio of that seed. Rows come out grouped by (policy, ratio)
// in config order, seeds ascending.
inline ExperimentReport run_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<std::tuple<std::size_t, std::size_t, std::size_t>> keys;
  std::vector<RunMetrics> rows;

  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    ModelConfig model_cfg = cfg.model;
    model_cfg.seed = cfg.model.seed + r;
    DecoderState model = DecoderState::build(model_cfg);
    std::vector<std::size_t> prompt =
        random_prompt(cfg.prompt_len, model_cfg.vocab_size, model_cfg.seed);

    PolicyConfig full;
    full.kind = PolicyKind::full_cache;
    full.budget_ratio = 1.0;
    GenerationResult reference = run_generation(model, prompt, full, cfg.gen_steps);
    RunComparison self = compare_generations(reference, reference);

    for (std::size_t pi = 0; pi < cfg.policies.size(); ++pi) {
      for (std::size_t ri = 0; ri < cfg.budget_ratios.size(); ++ri) {
        const double ratio = cfg.budget_ratios[ri];
        RunMetrics row;
        if (cfg.policies[pi].kind == PolicyKind::full_cache) {
          row = make_run_metrics(cfg.policies[pi], ratio, model_cfg.seed, reference, self,
                                 model_cfg.d_head);
        } else {
          PolicyConfig policy = cfg.policies[pi];
          policy.budget_ratio = ratio;
          GenerationResult run = run_generation(model, prompt, policy, cfg.gen_steps);
          row = make_run_metrics(policy, ratio, model_cfg.seed, run,
                                 compare_generations(run, reference), model_cfg.d_head);
        }
        keys.emplace_back(pi, ri, r);
        rows.push_back(std::move(row));
      }
    }
  }

  std::vector<std::size_t> order(rows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  ExperimentReport report;
  report.rows.reserve(rows.size());
  for (std::size_t i : order) report.rows.push_back(std::move(rows[i]));
  return report;
}

inline constexpr const char* kSweepCsvHeader =
    "policy,vatp,ratio,seed,token_match_rate,attn_recon_error,divergence_step,kv_bytes,aux_bytes";

inline void write_sweep_csv(std::ostream& out, const ExperimentReport& report) {
  out << kSweepCsvHeader << '\n';
  for (const RunMetrics& row : report.rows) {
    out << row.policy << ',' << (row.vatp ? 1 : 0) << ',' << fmt_double(row.ratio) << ','
        << row.seed << ',' << fmt_double(row.token_match_rate) << ','
        << fmt_double(row.attn_recon_error) << ',';
    if (row.divergence_step) {
      out << *row.divergence_step;
    } else {
      out << -1;
    }
    out << ',' << row.kv_bytes << ',' << row.aux_bytes << '\n';
  }
}

inline std::string sweep_csv_string(const ExperimentReport& report) {
  std::ostringstream out;
  write_sweep_csv(out, report);
  return out.str();
}

// Win/tie/loss counts of a value-aware variant against its attention-only
// baseline, per metric, across seeds.
struct VatpComparison {
  std::string baseline;
  double ratio = 1.0;
  std::size_t recon_better = 0, recon_tied = 0, recon_worse = 0;
  std::size_t match_better = 0, match_tied = 0, match_worse = 0;
  std::size_t pairs = 0;
};

inline std::vector<VatpComparison> compare_vatp(const ExperimentReport& report) {
  std::vector<VatpComparison> out;
  std::vector<std::string> baselines;
  for (const RunMetrics& row : report.rows) {
    if (row.vatp) continue;
    bool seen = false;
    for (const std::string& b : baselines) seen = seen || b == row.policy;
    if (!seen) baselines.push_back(row.policy);
  }
  for (const std::string& baseline : baselines) {
    std::vector<double> ratios;
    for (const RunMetrics& row : report.rows) {
      if (row.policy != baseline || row.vatp) continue;
      bool seen = false;
      for (double r : ratios) seen = seen || r == row.ratio;
      if (!seen) ratios.push_back(row.ratio);
    }
    for (double ratio : ratios) {
      VatpComparison cmp;
      cmp.baseline = baseline;
      cmp.ratio = ratio;
      for (const RunMetrics& base : report.rows) {
        if (base.policy != baseline || base.vatp || base.ratio != ratio) continue;
        for (const RunMetrics& variant : report.rows) {
          if (variant.policy != baseline || !variant.vatp || variant.ratio != ratio ||
              variant.seed != base.seed) {
            continue;
          }
          ++cmp.pairs;
          if (variant.attn_recon_error < base.attn_recon_error) ++cmp.recon_better;
          else if (variant.attn_recon_error == base.attn_recon_error) ++cmp.recon_tied;
          else ++cmp.recon_worse;
          if (variant.token_match_rate > base.token_match_rate) ++cmp.match_better;
          else if (variant.token_match_rate == base.token_match_rate) ++cmp.match_tied;
          else ++cmp.match_worse;
        }
      }
      if (cmp.pairs > 0) out.push_back(cmp);
    }
  }
  return out;
}

inline constexpr const char* kCompareCsvHeader =
    "baseline,ratio,recon_better,recon_tied,recon_worse,match_better,match_tied,match_worse";

inline void write_compare_csv(std::ostream& out, const std::vector<VatpComparison>& rows) {
  out << kCompareCsvHeader << '\n';
  for (const VatpComparison& c : rows) {
    out << c.baseline << ',' << fmt_double(c.ratio) << ',' << c.recon_better << ',' << c.recon_tied
        << ',' << c.recon_worse << ',' << c.match_better << ',' << c.match_tied << ','
        << c.match_worse << '\n';
  }
}

inline std::string format_compare_table(const std::vector<VatpComparison>& rows) {
  std::ostringstream out;
  out << "value-aware variant vs baseline (better/tied/worse per seed)\n";
  out << "baseline        ratio   recon_error     token_match\n";
  for (const VatpComparison& c : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "%-15s %-7g %zu/%zu/%zu\t%zu/%zu/%zu\n", c.baseline.c_str(),
                  c.ratio, c.recon_better, c.recon_tied, c.recon_worse, c.match_better,
                  c.match_tied, c.match_worse);
    out << line;
  }
  return out.str();
}

// Canonical flat-config echo written next to every CSV so a run directory
// reproduces itself.
inline std::string experiment_config_echo(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "model.n_layers = " << cfg.model.n_layers << '\n';
  out << "model.n_heads = " << cfg.model.n_heads << '\n';
  out << "model.d_model = " << cfg.model.d_model << '\n';
  out << "model.d_head = " << cfg.model.d_head << '\n';
  out << "model.vocab_size = " << cfg.model.vocab_size << '\n';
  out << "model.seed = " << cfg.model.seed << '\n';
  out << "model.sink_bias = " << (cfg.model.sink_bias ? "true" : "false") << '\n';
  out << "prompt_len = " << cfg.prompt_len << '\n';
  out << "gen_steps = " << cfg.gen_steps << '\n';
  out << "repeats = " << cfg.repeats << '\n';
  out << "output_dir = " << cfg.output_dir << '\n';
  out << "budget_ratios = ";
  for (std::size_t i = 0; i < cfg.budget_ratios.size(); ++i) {
    if (i) out << ',';
    out << fmt_double(cfg.budget_ratios[i]);
  }
  out << '\n';
  out << "policies = ";
  for (std::size_t i = 0; i < cfg.policies.size(); ++i) {
    if (i) out << ',';
    out << cfg.policies[i].name();
  }
  out << '\n';
  if (!cfg.policies.empty()) {
    const PolicyConfig& p = cfg.policies.front();
    out << "policy.sink_count = " << p.sink_count << '\n';
    out << "policy.local_window = " << p.local_window << '\n';
    out << "policy.history_window = " << p.history_window << '\n';
    out << "policy.norm_order = " << norm_order_name(p.norm_order) << '\n';
  }
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << content;
  out.flush();
  if (!out) throw IoError("write failed: " + path);
}

// Runs the sweep and stamps `output_dir` with sweep.csv + config.txt.
inline ExperimentReport run_sweep_to_dir(const ExperimentConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  if (ec) throw IoError("cannot create output dir '" + cfg.output_dir + "': " + ec.message());
  ExperimentReport report = run_sweep(cfg);
  write_text_file(cfg.output_dir + "/sweep.csv", sweep_csv_string(report));
  write_text_file(cfg.output_dir + "/config.txt", experiment_config_echo(cfg));
  return report;
}

}  // namespace kvprune
