#pragma once

// Kurtosis-guided rank allocation.
//
// Every projection matrix gets a kurtosis score; matrices are visited in
// descending kurtosis order and each takes the largest bucket rank that keeps
// the running total within N * avg_budget.

#include "moelrc/moe_model.hpp"
#include "moelrc/quantizer.hpp"
#include "moelrc/types.hpp"

#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace moelrc {

struct KurtosisValue {
  double value = 0.0;
  bool degenerate = false;  // constant input: value is reported as 0
};

/// Population kurtosis (1/d) sum (w - mu)^4 / sigma^4, without the -3 offset.
/// Throws std::invalid_argument for empty input.
KurtosisValue kurtosis(std::span<const double> values);
KurtosisValue kurtosis(const Matrix& w);

inline const std::vector<Index> kDefaultBuckets{0, 16, 32, 128, 256, 512, 1024};
inline constexpr Index kNoRankCap = std::numeric_limits<Index>::max();

enum class AllocationScope { global, per_layer };

std::string_view to_string(AllocationScope s);
AllocationScope allocation_scope_from_string(std::string_view s);

struct KurtosisEntry {
  MatrixKey key;
  double kurtosis = 0.0;
  Index max_rank = kNoRankCap;  // e.g. min(m, n) of the matrix
};

struct KurtosisProfile {
  std::vector<KurtosisEntry> entries;
  Index elements_per_matrix = 0;
};

struct RankAllocation {
  std::vector<Index> buckets;
  Index avg_budget = 0;
  AllocationScope scope = AllocationScope::global;
  std::map<MatrixKey, Index> ranks;

  Index total_rank() const;
  /// 0 for keys without an entry.
  Index rank_of(const MatrixKey& key) const;
};

/// Descending-kurtosis traversal order; ties break by key ascending.
std::vector<std::size_t> allocation_order(const KurtosisProfile& profile);

/// Throws std::invalid_argument if avg_budget < 0 or buckets lack 0.
RankAllocation allocate_ranks(const KurtosisProfile& profile, Index avg_budget,
                              std::vector<Index> buckets = kDefaultBuckets,
                              AllocationScope scope = AllocationScope::global);

/// Kurtosis of every projection of every (routed and shared) expert.
KurtosisProfile kurtosis_profile(const MoEModel& model, bool cap_at_matrix_rank = true);

/// Audit table: one object per matrix with layer, expert, projection, kurtosis, rank.
std::string allocation_to_json(const RankAllocation& alloc, const KurtosisProfile& profile);
RankAllocation allocation_from_json(const std::string& text);

struct SpearmanResult {
  double rho = 0.0;
  bool degenerate = false;  // fewer than two pairs or a constant variable
};

SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

struct ResidualStats {
  MatrixKey key;
  double kurtosis = 0.0;
  double rel_fro = 0.0;
};

struct KurtosisErrorReport {
  std::vector<ResidualStats> stats;
  SpearmanResult correlation;
};

KurtosisErrorReport kurtosis_error_report(const MoEModel& model, const QuantConfig& cfg);

}  // namespace moelrc
