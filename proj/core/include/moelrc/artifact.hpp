#pragma once

#include "moelrc/compensator.hpp"
#include "moelrc/quantizer.hpp"
#include "moelrc/rank_allocator.hpp"
#include "moelrc/types.hpp"

#include <cstdint>
#include <vector>

namespace moelrc {

inline constexpr int kArtifactFormatVersion = 1;

struct ModelShape {
  Index hidden = 0;
  Index ffn = 0;
  Index num_layers = 0;
  Index num_experts = 0;
  Index num_shared = 0;

  Index experts_per_layer() const { return num_experts + num_shared; }
  bool operator==(const ModelShape&) const = default;
};

struct ArtifactHeader {
  int format_version = kArtifactFormatVersion;
  ModelShape dims;
  QuantConfig quant;
  CompensatorOptions factors;
  std::vector<Index> buckets = kDefaultBuckets;
  Index avg_budget = 0;
  AllocationScope scope = AllocationScope::global;
  std::uint64_t seed = 0;
};

struct ProjectionArtifact {
  MatrixKey key;
  QuantizedMatrix weights;
  Compensator compensator;
  double kurtosis = 0.0;
  Index rank = 0;

  bool operator==(const ProjectionArtifact&) const = default;
};

/// Quantized experts, their compensators and the rank allocation that produced them.
struct CompressedModel {
  ArtifactHeader header;
  std::vector<ProjectionArtifact> projections;  // sorted by key

  const ProjectionArtifact* find(const MatrixKey& key) const;

  /// Every projection of every expert present exactly once, shapes consistent
  /// with header.dims. Throws FormatError otherwise.
  void validate() const;
};

}  // namespace moelrc
