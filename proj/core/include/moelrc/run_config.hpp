#pragma once

// JSON run configuration for the command-line pipeline. Every section is
// optional; absent fields keep their defaults. Unknown fields and type errors
// are rejected with ConfigError naming the dotted field path.
//
//   {
//     "seed": 0,
//     "threads": 0,
//     "model":      {"hidden", "ffn", "num_layers", "num_experts", "num_shared",
//                    "tail_dofs": [3, "inf"], "router_preset" | "router_skew", "eval_tokens"},
//     "quant":      {"bits", "group_size", "hqq_iters", "hqq_shrink_p", "hqq_beta", "hqq_beta_growth"},
//     "allocation": {"avg_budget", "buckets", "scope", "factor_bits", "factor_group_size"},
//     "forward":    {"top_k", "top_n", "renormalize_topk", "compensate_shared"},
//     "system":     {...} or [{...}, ...],
//     "simulate":   {"dims_preset", "dims": {...}, "router_preset" | "router_skew",
//                    "input_len", "output_lens", "prefill", "trace", "baseline_plan",
//                    "plans": [{"name", "expert_bits", "compensated_top_n", "rank",
//                               "allocation_file", "factor_bits", "cache_policy",
//                               "cache_budget_bytes"}]}
//   }

#include "moelrc/compensator.hpp"
#include "moelrc/moe_engine.hpp"
#include "moelrc/offload_sim.hpp"
#include "moelrc/quantizer.hpp"
#include "moelrc/rank_allocator.hpp"
#include "moelrc/synthetic.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace moelrc {

struct ModelSection {
  SyntheticModelSpec spec;
  Index eval_tokens = 256;  // tokens for stats and infer
};

struct AllocationSection {
  Index avg_budget = 32;
  std::vector<Index> buckets = kDefaultBuckets;
  AllocationScope scope = AllocationScope::global;
  CompensatorOptions factors;
};

struct SimulateSection {
  ModelDims dims;
  double router_skew = 1.4;
  Index input_len = 256;
  std::vector<Index> output_lens{512};
  bool prefill = true;
  std::string trace_path;     // JSONL trace; synthetic when empty
  std::string baseline_plan;  // speedups are relative to this plan (first plan when empty)
  std::vector<TransferPlan> plans;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  ModelSection model;
  QuantConfig quant;
  AllocationSection allocation;
  ForwardConfig forward;
  std::vector<SystemConfig> systems{SystemConfig{}};
  SimulateSection simulate;

  RunConfig();
  /// Cross-field checks; throws ConfigError naming the field.
  void validate() const;
};

/// fp16, int3, int2 and their top-1 rank-32 compensated variants.
std::vector<TransferPlan> default_plans();

/// Relative paths inside the config (plan allocation files, the trace) are
/// resolved against `base_dir`.
RunConfig parse_run_config(const std::string& json_text,
                           const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

void set_seed(RunConfig& cfg, std::uint64_t seed);
/// Applies dims preset `name` to the simulate section. For "toy", also sizes
/// the synthetic model.
void apply_preset(RunConfig& cfg, const std::string& name);

}  // namespace moelrc
