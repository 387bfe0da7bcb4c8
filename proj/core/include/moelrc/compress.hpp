#pragma once

#include "moelrc/artifact.hpp"
#include "moelrc/moe_model.hpp"

namespace moelrc {

struct CompressOptions {
  QuantConfig quant;
  Index avg_budget = 32;
  std::vector<Index> buckets = kDefaultBuckets;
  AllocationScope scope = AllocationScope::global;
  CompensatorOptions factors;
  std::uint64_t seed = 0;  // recorded in the artifact header
  unsigned threads = 0;    // 0: MOE_LRC_THREADS or hardware concurrency
};

struct CompressResult {
  CompressedModel model;
  KurtosisProfile profile;
  RankAllocation allocation;
};

/// Kurtosis profile, greedy rank allocation, then per projection: quantize and
/// build a compensator of the allocated rank from the final residual.
/// Output is independent of the thread count.
CompressResult compress_model(const MoEModel& model, const CompressOptions& opts);

/// Compress with an externally fixed rank for every matrix (uniform ablations).
CompressResult compress_model_uniform(const MoEModel& model, const CompressOptions& opts,
                                      Index rank);

}  // namespace moelrc
