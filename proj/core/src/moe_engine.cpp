#include "moelrc/moe_engine.hpp"

#include "moelrc/parallel.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace moelrc {

void ForwardConfig::validate(Index num_experts) const {
  if (top_k < 1 || top_k > num_experts)
    throw std::invalid_argument("forward.top_k must lie in [1, num_experts=" +
                                std::to_string(num_experts) + "] (got " + std::to_string(top_k) + ")");
  if (top_n < 0 || top_n > top_k)
    throw std::invalid_argument("forward.top_n must lie in [0, top_k] (got " +
                                std::to_string(top_n) + ")");
}

std::string_view to_string(ForwardMode m) {
  switch (m) {
    case ForwardMode::reference:
      return "reference";
    case ForwardMode::quantized:
      return "quantized";
    case ForwardMode::compensated:
      return "compensated";
  }
  return "?";
}

ForwardMode forward_mode_from_string(std::string_view s) {
  if (s == "reference") return ForwardMode::reference;
  if (s == "quantized") return ForwardMode::quantized;
  if (s == "compensated") return ForwardMode::compensated;
  throw ConfigError("--mode must be reference, quantized or compensated (got '" + std::string(s) +
                    "')");
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) return logits;
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

Routing route(const Vector& x, const Matrix& gate, const ForwardConfig& cfg) {
  if (x.size() != gate.rows())
    throw std::invalid_argument("route: token dimension " + std::to_string(x.size()) +
                                " != gate rows " + std::to_string(gate.rows()));
  cfg.validate(gate.cols());
  Routing r;
  const Vector logits = (x.transpose() * gate).transpose();
  r.weights = softmax(logits);

  std::vector<Index> order(static_cast<std::size_t>(gate.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return r.weights(a) > r.weights(b); });
  r.selected.assign(order.begin(), order.begin() + cfg.top_k);
  r.compensated.assign(r.selected.begin(), r.selected.begin() + cfg.top_n);

  if (cfg.renormalize_topk) {
    double sum = 0.0;
    for (Index id : r.selected) sum += r.weights(id);
    Vector w = Vector::Zero(r.weights.size());
    for (Index id : r.selected) w(id) = r.weights(id) / sum;
    r.weights = w;
  }
  return r;
}

ResolvedWeights::ResolvedWeights(const CompressedModel& artifact, unsigned threads) {
  const ModelShape& d = artifact.header.dims;
  experts_per_layer_ = d.experts_per_layer();
  entries_.resize(static_cast<std::size_t>(d.num_layers * experts_per_layer_));

  parallel_for(entries_.size(), resolve_threads(threads), [&](std::size_t idx) {
    const int layer = static_cast<int>(static_cast<Index>(idx) / experts_per_layer_);
    const int expert = static_cast<int>(static_cast<Index>(idx) % experts_per_layer_);
    Entry entry;
    ExpertWeights comp;
    bool any_rank = false;
    for (Projection p : kProjections) {
      const ProjectionArtifact* art = artifact.find({layer, expert, p});
      if (art == nullptr) return;
      entry.quantized.projection(p) = dequantize(art->weights);
      comp.projection(p) = entry.quantized.projection(p);
      if (!art->compensator.empty()) {
        any_rank = true;
        comp.projection(p).noalias() += art->compensator.product();
      }
    }
    if (any_rank) entry.compensated = std::move(comp);
    entries_[idx] = std::move(entry);
  });
}

const ResolvedWeights::Entry* ResolvedWeights::entry(Index layer, Index expert) const {
  if (layer < 0 || expert < 0 || expert >= experts_per_layer_) return nullptr;
  const auto idx = static_cast<std::size_t>(layer * experts_per_layer_ + expert);
  if (idx >= entries_.size() || !entries_[idx]) return nullptr;
  return &*entries_[idx];
}

const ExpertWeights* ResolvedWeights::quantized(Index layer, Index expert) const {
  const Entry* e = entry(layer, expert);
  return e ? &e->quantized : nullptr;
}

const ExpertWeights* ResolvedWeights::compensated(Index layer, Index expert) const {
  const Entry* e = entry(layer, expert);
  if (!e) return nullptr;
  return e->compensated ? &*e->compensated : &e->quantized;
}

bool ResolvedWeights::has_compensator(Index layer, Index expert) const {
  const Entry* e = entry(layer, expert);
  return e && e->compensated.has_value();
}

namespace {

const ExpertWeights& pick(const MoEModel& model, Index layer, Index expert, ForwardMode mode,
                          bool compensate, const ResolvedWeights* weights) {
  if (mode == ForwardMode::reference)
    return model.layers[static_cast<std::size_t>(layer)].expert(static_cast<int>(expert));
  if (weights == nullptr)
    throw std::invalid_argument("forward: " + std::string(to_string(mode)) +
                                " mode requires compressed artifacts");
  const ExpertWeights* w = compensate && mode == ForwardMode::compensated
                               ? weights->compensated(layer, expert)
                               : weights->quantized(layer, expert);
  if (w == nullptr)
    throw std::invalid_argument("forward: no artifact for layer " + std::to_string(layer) +
                                " expert " + std::to_string(expert));
  return *w;
}

}  // namespace

Vector forward_routed(const Vector& x, const MoEModel& model, Index layer, const Routing& routing,
                      ForwardMode mode, const ResolvedWeights* weights, bool compensate_shared) {
  if (layer < 0 || layer >= model.num_layers())
    throw std::invalid_argument("forward: layer out of range");
  if (x.size() != model.hidden) throw std::invalid_argument("forward: token dimension mismatch");
  Vector y = Vector::Zero(model.hidden);
  for (Index id : routing.selected) {
    const bool comp = std::find(routing.compensated.begin(), routing.compensated.end(), id) !=
                      routing.compensated.end();
    y += routing.weights(id) * expert_forward(pick(model, layer, id, mode, comp, weights), x);
  }
  const Index n = model.num_experts();
  for (Index s = 0; s < model.num_shared(); ++s)
    y += expert_forward(pick(model, layer, n + s, mode, compensate_shared, weights), x);
  return y;
}

Vector forward(const Vector& x, const MoEModel& model, Index layer, const ForwardConfig& cfg,
               ForwardMode mode, const ResolvedWeights* weights) {
  if (layer < 0 || layer >= model.num_layers())
    throw std::invalid_argument("forward: layer out of range");
  const Routing r = route(x, model.layers[static_cast<std::size_t>(layer)].gate, cfg);
  return forward_routed(x, model, layer, r, mode, weights, cfg.compensate_shared);
}

RoutingTrace trace_tokens(const std::vector<Matrix>& gates, const Matrix& tokens,
                          const ForwardConfig& cfg) {
  RoutingTrace trace;
  trace.reserve(static_cast<std::size_t>(tokens.rows()) * gates.size());
  for (Index t = 0; t < tokens.rows(); ++t) {
    const Vector x = tokens.row(t).transpose();
    for (std::size_t l = 0; l < gates.size(); ++l) {
      Routing r = route(x, gates[l], cfg);
      TraceRecord rec;
      rec.token = t;
      rec.layer = static_cast<Index>(l);
      rec.scores.assign(r.weights.data(), r.weights.data() + r.weights.size());
      rec.selected = std::move(r.selected);
      rec.compensated = std::move(r.compensated);
      trace.push_back(std::move(rec));
    }
  }
  return trace;
}

RoutingTrace trace_tokens(const MoEModel& model, const Matrix& tokens, const ForwardConfig& cfg) {
  std::vector<Matrix> gates;
  for (const MoELayer& l : model.layers) gates.push_back(l.gate);
  return trace_tokens(gates, tokens, cfg);
}

RoutingStats routing_stats(const RoutingTrace& trace) {
  if (trace.empty()) throw std::invalid_argument("routing_stats: empty trace");
  RoutingStats st;
  Index max_layer = 0;
  std::size_t width = 0;
  for (const TraceRecord& r : trace) {
    max_layer = std::max(max_layer, r.layer);
    width = std::max(width, r.scores.size());
  }
  st.per_layer.assign(static_cast<std::size_t>(max_layer + 1), std::vector<double>(width, 0.0));
  std::vector<Index> layer_counts(static_cast<std::size_t>(max_layer + 1), 0);
  st.aggregate.assign(width, 0.0);
  for (const TraceRecord& r : trace) {
    std::vector<double> s = r.scores;
    std::sort(s.begin(), s.end(), std::greater<>());
    s.resize(width, 0.0);
    auto& row = st.per_layer[static_cast<std::size_t>(r.layer)];
    for (std::size_t i = 0; i < width; ++i) {
      row[i] += s[i];
      st.aggregate[i] += s[i];
    }
    ++layer_counts[static_cast<std::size_t>(r.layer)];
  }
  for (std::size_t l = 0; l < st.per_layer.size(); ++l)
    if (layer_counts[l] > 0)
      for (double& v : st.per_layer[l]) v /= static_cast<double>(layer_counts[l]);
  for (double& v : st.aggregate) v /= static_cast<double>(trace.size());
  st.records = static_cast<Index>(trace.size());
  return st;
}

FidelityReport evaluate_fidelity(const MoEModel& model, const ResolvedWeights& weights,
                                 const Matrix& tokens, const ForwardConfig& cfg) {
  if (tokens.rows() == 0) throw std::invalid_argument("evaluate_fidelity: no tokens");
  FidelityReport rep;
  Index wins = 0;
  for (Index t = 0; t < tokens.rows(); ++t) {
    const Vector x = tokens.row(t).transpose();
    for (Index l = 0; l < model.num_layers(); ++l) {
      const Routing r = route(x, model.layers[static_cast<std::size_t>(l)].gate, cfg);
      const Vector ref =
          forward_routed(x, model, l, r, ForwardMode::reference, &weights, cfg.compensate_shared);
      const Vector q =
          forward_routed(x, model, l, r, ForwardMode::quantized, &weights, cfg.compensate_shared);
      const Vector c =
          forward_routed(x, model, l, r, ForwardMode::compensated, &weights, cfg.compensate_shared);
      const double denom = ref.norm();
      const double eq = denom > 0.0 ? (q - ref).norm() / denom : (q - ref).norm();
      const double ec = denom > 0.0 ? (c - ref).norm() / denom : (c - ref).norm();
      rep.quantized_per_sample.push_back(eq);
      rep.compensated_per_sample.push_back(ec);
      if (ec < eq) ++wins;
    }
  }
  const auto n = static_cast<double>(rep.quantized_per_sample.size());
  rep.quantized_error =
      std::accumulate(rep.quantized_per_sample.begin(), rep.quantized_per_sample.end(), 0.0) / n;
  rep.compensated_error =
      std::accumulate(rep.compensated_per_sample.begin(), rep.compensated_per_sample.end(), 0.0) / n;
  rep.win_rate = static_cast<double>(wins) / n;
  return rep;
}

FidelityReport evaluate_fidelity(const MoEModel& model, const CompressedModel& artifact,
                                 const Matrix& tokens, const ForwardConfig& cfg) {
  const ResolvedWeights weights(artifact);
  return evaluate_fidelity(model, weights, tokens, cfg);
}

}  // namespace moelrc
