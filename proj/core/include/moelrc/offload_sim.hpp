#pragma once

// Analytical cost model for offloaded MoE decoding.
//
// GPU-only: every selected expert that is not cached on the GPU crosses PCIe
// at the plan's bit-width; compensated experts additionally fetch their
// low-rank factors. GPU-NDP: non-compensated experts run on the near-data
// device (bounded by its read bandwidth or compute rate) and only the top-n
// compensated experts plus activations cross PCIe.
//
// Per layer, transfer and compute are combined with max() when the system
// overlaps them and with a sum otherwise.

#include "moelrc/rank_allocator.hpp"
#include "moelrc/trace.hpp"
#include "moelrc/types.hpp"

#include <cstdint>
#include <list>
#include <map>
#include <optional>
#include <string>

namespace moelrc {

struct ModelDims {
  std::string name;
  Index hidden = 0;
  Index ffn = 0;
  Index num_layers = 0;
  Index num_experts = 0;
  Index top_k = 0;
  Index num_shared = 0;

  /// Parameters of one expert (three projections).
  std::uint64_t expert_params() const {
    return 3ull * static_cast<std::uint64_t>(hidden) * static_cast<std::uint64_t>(ffn);
  }
  void validate() const;
};

struct SystemConfig {
  std::string name = "h100-pcie";
  double pcie_bw = 25e9;          // bytes/s, effective host->device
  double gpu_flops = 989.4e12;    // flop/s
  double gpu_hbm_bw = 3.35e12;    // bytes/s
  std::uint64_t gpu_mem_capacity = 80'000'000'000ull;
  bool ndp_enabled = false;
  double ndp_bw = 512e9;
  std::uint64_t ndp_capacity = 512'000'000'000ull;
  double ndp_flops = 4e12;
  bool overlap = false;

  /// Throws ConfigError naming the offending field.
  void validate() const;
};

enum class CachePolicy { none, lru };

std::string_view to_string(CachePolicy p);
CachePolicy cache_policy_from_string(std::string_view s);

struct TransferPlan {
  std::string name = "fp16";
  int expert_bits = 16;
  Index compensated_top_n = 0;
  Index uniform_rank = 0;                 // used when `ranks` is absent
  std::optional<RankAllocation> ranks;    // per-matrix ranks from the allocator
  int factor_bits = 3;
  CachePolicy cache_policy = CachePolicy::none;
  std::uint64_t cache_budget_bytes = 0;

  void validate() const;
};

struct LayerCost {
  double transfer_s = 0.0;
  double compute_s = 0.0;
  double ndp_compute_s = 0.0;
  double latency_s = 0.0;
  std::uint64_t expert_bytes = 0;        // expert weights over PCIe
  std::uint64_t compensator_bytes = 0;   // low-rank factors over PCIe
  std::uint64_t activation_bytes = 0;    // GPU<->NDP activation shuttle
  std::uint64_t ndp_read_bytes = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_lookups = 0;

  std::uint64_t weight_bytes() const { return expert_bytes + compensator_bytes; }
};

struct SimReport {
  double tokens_per_s = 0.0;
  double prefill_s = 0.0;
  double decode_s = 0.0;
  // Means over decoded tokens, summed across layers.
  double latency_per_token_s = 0.0;
  double transfer_s = 0.0;
  double compute_s = 0.0;
  double ndp_compute_s = 0.0;
  std::uint64_t total_bytes_moved = 0;  // prefill + decode weight bytes over PCIe
  std::uint64_t prefill_bytes = 0;
  std::uint64_t expert_bytes = 0;       // decode only
  std::uint64_t compensator_bytes = 0;  // decode only
  std::uint64_t activation_bytes = 0;
  double cache_hit_rate = 0.0;
  Index output_len = 0;
};

struct SimulateOptions {
  Index input_len = 256;
  Index output_len = 512;
  bool prefill = true;
};

/// Byte-budgeted LRU over (layer, expert).
class ExpertLruCache {
 public:
  explicit ExpertLruCache(std::uint64_t budget_bytes = 0) : budget_(budget_bytes) {}

  /// Returns true on a hit; on a miss inserts the entry, evicting LRU entries.
  bool access(Index layer, Index expert, std::uint64_t bytes);
  void clear();
  std::uint64_t used_bytes() const { return used_; }
  std::size_t size() const { return lru_.size(); }

 private:
  using Key = std::pair<Index, Index>;
  std::uint64_t budget_;
  std::uint64_t used_ = 0;
  std::list<std::pair<Key, std::uint64_t>> lru_;  // front = most recent
  std::map<Key, std::list<std::pair<Key, std::uint64_t>>::iterator> index_;
};

class OffloadSimulator {
 public:
  /// Validates all three inputs; throws ConfigError on an infeasible setup
  /// (LRU budget below one expert, NDP capacity below the resident experts).
  OffloadSimulator(ModelDims dims, SystemConfig sys, TransferPlan plan);

  /// Bytes of one expert at the plan's bit-width, codes only.
  std::uint64_t expert_bytes() const { return expert_bytes_; }
  /// Low-rank factor bytes of one expert (zero for 16-bit plans).
  std::uint64_t compensator_bytes(Index layer, Index expert) const;
  /// Expert weights plus compensators resident off-GPU.
  std::uint64_t resident_bytes() const;

  /// Stateful: consults and updates the LRU cache.
  LayerCost token_cost_gpu_only(const TraceRecord& rec);
  LayerCost token_cost_gpu_ndp(const TraceRecord& rec);
  LayerCost token_cost(const TraceRecord& rec);

  /// Resets the cache, then simulates prefill and output_len decode tokens.
  /// Throws FormatError when the trace has fewer than output_len complete tokens.
  SimReport simulate(const RoutingTrace& trace, const SimulateOptions& opts);

  const ModelDims& dims() const { return dims_; }
  const SystemConfig& system() const { return sys_; }
  const TransferPlan& plan() const { return plan_; }

 private:
  double gpu_compute_s(double flops, double hbm_bytes) const;
  double expert_flops() const;
  double reconstruction_flops(Index layer, Index expert) const;
  Index plan_rank(const MatrixKey& key) const;
  void check_record(const TraceRecord& rec) const;
  Index effective_top_n(const TraceRecord& rec) const;
  LayerCost prefill_layer(Index layer, const std::vector<Index>& touched, Index tokens) const;

  ModelDims dims_;
  SystemConfig sys_;
  TransferPlan plan_;
  std::uint64_t expert_bytes_ = 0;
  ExpertLruCache cache_;
};

/// One cell of a plan x system x output-length grid.
struct SweepRow {
  std::string plan;
  std::string system;
  std::string mode;  // gpu_only | gpu_ndp
  Index output_len = 0;
  int expert_bits = 16;
  Index top_n = 0;
  SimReport report;
};

std::vector<SweepRow> sweep_report(const std::vector<TransferPlan>& plans,
                                   const std::vector<SystemConfig>& systems,
                                   const std::vector<Index>& output_lens, const RoutingTrace& trace,
                                   const ModelDims& dims, Index input_len = 256, bool prefill = true,
                                   unsigned threads = 1);

/// CSV with header row; floats at 9 significant digits.
std::string sweep_csv_header();
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace moelrc
