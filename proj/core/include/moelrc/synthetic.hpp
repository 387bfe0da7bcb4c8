#pragma once

// Deterministic synthetic MoE weights and tokens standing in for real
// checkpoints. Expert entries are unit-variance Student-t draws (heavier tails
// for smaller dof) and gates are orthonormal columns scaled by `router_skew`,
// so for standard-normal tokens every logit is N(0, router_skew^2).

#include "moelrc/moe_model.hpp"

#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

namespace moelrc {

inline constexpr double kGaussianDof = std::numeric_limits<double>::infinity();

struct SyntheticModelSpec {
  std::uint64_t seed = 0;
  Index hidden = 64;
  Index ffn = 128;
  Index num_layers = 2;
  Index num_experts = 8;
  Index num_shared = 0;
  // Per-expert Student-t degrees of freedom, cycled when shorter than the
  // expert count. Infinity selects a Gaussian. Values <= 2 are rejected.
  std::vector<double> tail_dofs{kGaussianDof};
  double router_skew = 1.4;

  void validate() const;
};

/// Logit scale of a named router preset ("uniform", "mixtral-like",
/// "mixtral-8x22b-like", "deepseek-like"). Throws ConfigError otherwise.
double router_skew_preset(std::string_view name);

MoEModel gen_synthetic_model(const SyntheticModelSpec& spec);

/// Gates only, for routing studies at full model width without expert weights.
std::vector<Matrix> gen_synthetic_gates(std::uint64_t seed, Index hidden, Index num_layers,
                                        Index num_experts, double router_skew);

/// `count` standard-normal token vectors as the rows of a count x hidden matrix.
Matrix gen_tokens(std::uint64_t seed, Index count, Index hidden);

/// Unit-variance Student-t matrix (Gaussian for dof == infinity).
Matrix student_t_matrix(std::uint64_t seed, Index rows, Index cols, double dof, double scale = 1.0);

/// SplitMix64 finalizer used to derive independent sub-stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                       std::uint64_t c = 0);

}  // namespace moelrc
