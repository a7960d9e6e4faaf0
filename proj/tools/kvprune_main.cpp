// kvprune: desk-scale KV-cache token-pruning simulator.
//
// Subcommands: sweep, compare, trace record, trace replay, trace synth.
// All experiment state comes from a flat key-value config file; --seed and
// --out override the config's seed and output location.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "kvprune/config.hpp"
#include "kvprune/harness.hpp"
#include "kvprune/trace.hpp"

namespace {

using namespace kvprune;

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool decimal = false;
  std::string in;
  std::optional<std::size_t> prefill;
};

FlatConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) return FlatConfig::parse_string("", "<defaults>");
  return FlatConfig::parse_file(args.config_path);
}

int cmd_sweep(const CommonArgs& args, bool compare_mode) {
  FlatConfig flat = load_config(args);
  ExperimentConfig cfg = parse_experiment_config(flat);
  flat.fail_on_unused();
  if (args.seed) cfg.model.seed = *args.seed;
  if (!args.out.empty()) cfg.output_dir = args.out;

  ExperimentReport report = run_sweep_to_dir(cfg);
  std::size_t clamped = 0;
  for (const RunMetrics& row : report.rows) clamped += row.budget_clamped ? 1 : 0;
  if (clamped > 0) {
    std::cerr << "warning: budget raised to fit sinks + local window in " << clamped
              << " of " << report.rows.size() << " runs\n";
  }
  std::cout << "wrote " << report.rows.size() << " rows to " << cfg.output_dir << "/sweep.csv\n";

  if (compare_mode) {
    auto rows = compare_vatp(report);
    if (rows.empty()) {
      throw InvalidConfig(
          "compare needs each baseline listed with and without vatp (e.g. h2o,h2o+vatp)");
    }
    std::ostringstream csv;
    write_compare_csv(csv, rows);
    write_text_file(cfg.output_dir + "/compare.csv", csv.str());
    std::cout << format_compare_table(rows);
    std::cout << "wrote " << rows.size() << " comparison rows to " << cfg.output_dir
              << "/compare.csv\n";
  }
  return 0;
}

int cmd_trace_record(const CommonArgs& args) {
  FlatConfig flat = load_config(args);
  ModelConfig model_cfg = parse_model_config(flat);
  PolicyConfig policy = parse_single_policy(flat);
  const std::size_t prompt_len = flat.get_count("prompt_len", 256);
  const std::size_t gen_steps = flat.get_count("gen_steps", 64);
  flat.fail_on_unused();
  if (args.seed) model_cfg.seed = *args.seed;

  DecoderState model = DecoderState::build(model_cfg);
  std::vector<std::size_t> prompt = random_prompt(prompt_len, model_cfg.vocab_size, model_cfg.seed);
  GenerationOptions opts;
  opts.collect_trace = true;
  GenerationResult run = run_generation(model, prompt, policy, gen_steps, opts);
  if (run.evictions.budget_clamped) {
    std::cerr << "warning: budget raised to fit sinks + local window\n";
  }
  run.trace.decimal = args.decimal;
  write_trace_file(args.out, run.trace);
  std::cout << "recorded " << run.trace.records.size() << " records (" << prompt_len
            << " prompt + " << gen_steps << " generated steps) to " << args.out << '\n';
  return 0;
}

int cmd_trace_replay(const CommonArgs& args) {
  FlatConfig flat = load_config(args);
  PolicyConfig policy = parse_single_policy(flat);
  flat.fail_on_unused();

  Trace trace = read_trace_file(args.in);
  ReplayReport report = replay(trace, policy);
  if (report.evictions.budget_clamped) {
    std::cerr << "warning: budget raised to fit sinks + local window\n";
  }
  std::cout << "replayed " << report.steps_replayed << " steps under policy " << policy.name()
            << " (base budget " << report.base_budget << ")\n";
  std::cout << "evicted " << report.evictions.evicted << " slots, sink evictions "
            << report.evictions.sink_evictions << '\n';
  std::cout << "open-loop replay: recorded rows are not regenerated after evictions\n";

  if (!args.out.empty()) {
    std::ostringstream csv;
    csv << "step,layer,head,retained,evicted\n";
    for (const ReplayStepInfo& info : report.steps) {
      csv << info.step << ',' << info.layer << ',' << info.head << ',' << info.retained.size()
          << ',' << info.evicted << '\n';
    }
    write_text_file(args.out, csv.str());
    std::cout << "wrote per-step report to " << args.out << '\n';
  }
  return 0;
}

int cmd_trace_synth(const CommonArgs& args) {
  FlatConfig flat = load_config(args);
  SyntheticTraceSpec spec = parse_synth_spec(flat);
  flat.fail_on_unused();
  if (args.seed) spec.seed = *args.seed;

  Trace trace = synthesize(spec);
  if (args.prefill) trace.prefill_len = *args.prefill;
  trace.decimal = args.decimal;
  write_trace_file(args.out, trace);
  std::cout << "synthesized " << trace.records.size() << " steps to " << args.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"kvprune: KV-cache token-pruning simulator"};
  app.require_subcommand(1);

  CommonArgs sweep_args, compare_args, record_args, replay_args, synth_args;

  CLI::App* sweep = app.add_subcommand("sweep", "run the policy x budget-ratio experiment grid");
  sweep->add_option("--config", sweep_args.config_path, "experiment config file")->required();
  sweep->add_option("--seed", sweep_args.seed, "override model.seed");
  sweep->add_option("--out", sweep_args.out, "override output_dir");

  CLI::App* compare = app.add_subcommand(
      "compare", "sweep, then tally value-aware variants against their baselines");
  compare->add_option("--config", compare_args.config_path, "experiment config file")->required();
  compare->add_option("--seed", compare_args.seed, "override model.seed");
  compare->add_option("--out", compare_args.out, "override output_dir");

  CLI::App* trace = app.add_subcommand("trace", "record, replay or synthesize attention traces");
  trace->require_subcommand(1);

  CLI::App* record = trace->add_subcommand("record", "run the decoder and record a trace");
  record->add_option("--config", record_args.config_path, "model + policy config file")->required();
  record->add_option("--out", record_args.out, "trace file to write")->required();
  record->add_option("--seed", record_args.seed, "override model.seed");
  record->add_flag("--decimal", record_args.decimal, "write debug decimal floats instead of hex");

  CLI::App* replay_cmd = trace->add_subcommand("replay", "re-score a recorded trace offline");
  replay_cmd->add_option("--config", replay_args.config_path, "policy config file");
  replay_cmd->add_option("--in", replay_args.in, "trace file to read")->required();
  replay_cmd->add_option("--out", replay_args.out, "optional per-step CSV report");

  CLI::App* synth = trace->add_subcommand("synth", "generate a synthetic attention-sink trace");
  synth->add_option("--config", synth_args.config_path, "synth spec config file");
  synth->add_option("--out", synth_args.out, "trace file to write")->required();
  synth->add_option("--seed", synth_args.seed, "override synth.seed");
  synth->add_option("--prefill", synth_args.prefill, "mark the first N steps as prompt");
  synth->add_flag("--decimal", synth_args.decimal, "write debug decimal floats instead of hex");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sweep->parsed()) return cmd_sweep(sweep_args, false);
    if (compare->parsed()) return cmd_sweep(compare_args, true);
    if (record->parsed()) return cmd_trace_record(record_args);
    if (replay_cmd->parsed()) return cmd_trace_replay(replay_args);
    if (synth->parsed()) return cmd_trace_synth(synth_args);
  } catch (const kvprune::InvalidConfig& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const kvprune::InvalidSpec& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const kvprune::InvalidTrace& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const kvprune::InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const kvprune::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
