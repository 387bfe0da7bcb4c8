#pragma once

// Commands behind the moe-lrc CLI. All of them read a RunConfig and write
// into one output directory:
//
//   gen       model/ (model.json, model.bin), trace.jsonl
//   stats     kurtosis.csv, routing_stats.csv, stats_summary.csv
//   compress  artifact/ (manifest.json, blobs/), allocation.json
//   infer     fidelity.csv
//   simulate  sim.csv, speedup.csv
//   report    tradeoff.csv
//
// Later stages reuse earlier outputs found in the directory and otherwise
// rebuild them in memory from the config, so any command can run on its own.

#include "moelrc/artifact.hpp"
#include "moelrc/moe_model.hpp"
#include "moelrc/offload_sim.hpp"
#include "moelrc/run_config.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace moelrc {

struct PipelineContext {
  RunConfig cfg;
  std::filesystem::path out = ".";
  std::optional<ForwardMode> mode;  // infer: restrict to one mode
};

inline const std::vector<std::string> kCommands{"gen", "stats", "compress", "infer", "simulate",
                                                "report"};

void run_gen(const PipelineContext& ctx);
void run_stats(const PipelineContext& ctx);
void run_compress(const PipelineContext& ctx);
void run_infer(const PipelineContext& ctx);
void run_simulate(const PipelineContext& ctx);
void run_report(const PipelineContext& ctx);
/// Dispatch by name; throws ConfigError on an unknown command.
void run_command(const std::string& command, const PipelineContext& ctx);

/// The synthetic model described by the config, or out/model when it was
/// generated from the same spec. Throws Error when out/model is stale.
MoEModel pipeline_model(const PipelineContext& ctx);
Matrix pipeline_eval_tokens(const RunConfig& cfg);
/// Trace driving `simulate`: the configured JSONL file or a synthetic one with
/// max(input_len, max output_len) tokens over the simulate dims.
RoutingTrace pipeline_sim_trace(const RunConfig& cfg);
std::vector<SweepRow> pipeline_sweep(const RunConfig& cfg, const RoutingTrace& trace);

/// plan,system,mode,output_len,baseline_plan,tokens_per_s,baseline_tokens_per_s,speedup
std::string speedup_csv(const RunConfig& cfg, const std::vector<SweepRow>& rows);

}  // namespace moelrc
