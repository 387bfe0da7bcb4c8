#pragma once

// Batch-1 MoE layer forward passes in three precisions:
//   reference    full-precision expert weights
//   quantized    deq(Q(W)) for every expert
//   compensated  deq(Q(W)) + U V for the top-n routed experts (and shared
//                experts when configured), deq(Q(W)) for the rest

#include "moelrc/artifact.hpp"
#include "moelrc/moe_model.hpp"
#include "moelrc/trace.hpp"

#include <optional>
#include <string_view>
#include <vector>

namespace moelrc {

struct ForwardConfig {
  Index top_k = 2;
  Index top_n = 1;
  bool renormalize_topk = false;
  bool compensate_shared = true;

  /// Throws std::invalid_argument unless num_experts >= top_k >= top_n >= 0.
  void validate(Index num_experts) const;
};

enum class ForwardMode { reference, quantized, compensated };

std::string_view to_string(ForwardMode m);
ForwardMode forward_mode_from_string(std::string_view s);

struct Routing {
  Vector weights;  // softmax over all routed experts (renormalized over selected if configured)
  std::vector<Index> selected;
  std::vector<Index> compensated;
};

Vector softmax(const Vector& logits);

/// Top-k by weight with ties broken by lower expert id.
Routing route(const Vector& x, const Matrix& gate, const ForwardConfig& cfg);

/// Dense quantized and compensated expert weights, materialized once from a
/// CompressedModel so repeated forwards avoid re-dequantizing.
class ResolvedWeights {
 public:
  ResolvedWeights() = default;
  explicit ResolvedWeights(const CompressedModel& artifact, unsigned threads = 0);

  /// nullptr when the artifact lacks the expert.
  const ExpertWeights* quantized(Index layer, Index expert) const;
  const ExpertWeights* compensated(Index layer, Index expert) const;

  bool has_compensator(Index layer, Index expert) const;

 private:
  struct Entry {
    ExpertWeights quantized;
    std::optional<ExpertWeights> compensated;  // absent when every projection has rank 0
  };
  const Entry* entry(Index layer, Index expert) const;

  Index experts_per_layer_ = 0;
  std::vector<std::optional<Entry>> entries_;
};

/// Output of one MoE layer. Throws std::invalid_argument when a selected
/// expert is missing from `weights` in a non-reference mode.
Vector forward(const Vector& x, const MoEModel& model, Index layer, const ForwardConfig& cfg,
               ForwardMode mode, const ResolvedWeights* weights = nullptr);

/// Same routing, supplied explicitly (skips the gate).
Vector forward_routed(const Vector& x, const MoEModel& model, Index layer, const Routing& routing,
                      ForwardMode mode, const ResolvedWeights* weights, bool compensate_shared);

/// Route every token through every gate; one record per (token, layer),
/// ordered token-major.
RoutingTrace trace_tokens(const std::vector<Matrix>& gates, const Matrix& tokens,
                          const ForwardConfig& cfg);
RoutingTrace trace_tokens(const MoEModel& model, const Matrix& tokens, const ForwardConfig& cfg);

struct RoutingStats {
  // mean of the i-th largest score, per layer and across all records
  std::vector<std::vector<double>> per_layer;
  std::vector<double> aggregate;
  Index records = 0;
};

/// Throws std::invalid_argument on an empty trace.
RoutingStats routing_stats(const RoutingTrace& trace);

struct FidelityReport {
  double reference_error = 0.0;
  double quantized_error = 0.0;
  double compensated_error = 0.0;
  double win_rate = 0.0;          // fraction of (token, layer) with compensated < quantized
  std::vector<double> quantized_per_sample;
  std::vector<double> compensated_per_sample;
};

/// Relative error ||y_mode - y_ref|| / ||y_ref|| averaged over tokens and layers.
FidelityReport evaluate_fidelity(const MoEModel& model, const ResolvedWeights& weights,
                                 const Matrix& tokens, const ForwardConfig& cfg);
FidelityReport evaluate_fidelity(const MoEModel& model, const CompressedModel& artifact,
                                 const Matrix& tokens, const ForwardConfig& cfg);

}  // namespace moelrc
