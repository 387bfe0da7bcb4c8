#pragma once

#include "moelrc/types.hpp"

#include <vector>

namespace moelrc {

/// Gated-MLP expert, applied to a row vector x (1 x hidden):
///   E(x) = (silu(x w1) * (x w3)) w2
/// with w1, w3 of shape hidden x ffn and w2 of shape ffn x hidden.
struct ExpertWeights {
  Matrix w1;
  Matrix w2;
  Matrix w3;

  const Matrix& projection(Projection p) const;
  Matrix& projection(Projection p);
};

struct MoELayer {
  Matrix gate;                          // hidden x num_experts
  std::vector<ExpertWeights> experts;   // routed experts, ids 0..N-1
  std::vector<ExpertWeights> shared;    // always active, ids N..N+S-1

  Index num_experts() const { return static_cast<Index>(experts.size()); }
  const ExpertWeights& expert(int id) const;
};

struct MoEModel {
  Index hidden = 0;
  Index ffn = 0;
  std::vector<MoELayer> layers;

  Index num_layers() const { return static_cast<Index>(layers.size()); }
  Index num_experts() const;
  Index num_shared() const;
  /// Routed plus shared experts per layer.
  Index experts_per_layer() const { return num_experts() + num_shared(); }

  /// Shape checks across every layer and expert.
  void validate() const;

  bool operator==(const MoEModel& other) const;
};

/// Shape of a projection matrix in a model with the given hidden/ffn sizes.
inline std::pair<Index, Index> projection_shape(Projection p, Index hidden, Index ffn) {
  return p == Projection::w2 ? std::pair{ffn, hidden} : std::pair{hidden, ffn};
}

double silu(double v);

Vector expert_forward(const ExpertWeights& e, const Vector& x);

}  // namespace moelrc
