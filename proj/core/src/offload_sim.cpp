#include "moelrc/offload_sim.hpp"

#include "moelrc/compensator.hpp"
#include "moelrc/moe_model.hpp"
#include "moelrc/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace moelrc {

namespace {

void require_positive(double v, const char* field) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw ConfigError(std::string(field) + " must be a positive finite number");
}

bool contains(const std::vector<Index>& v, Index x, Index limit) {
  const auto end = v.begin() + std::min<Index>(limit, static_cast<Index>(v.size()));
  return std::find(v.begin(), end, x) != end;
}

}  // namespace

void ModelDims::validate() const {
  if (hidden <= 0 || ffn <= 0 || num_layers <= 0 || num_experts <= 0)
    throw ConfigError("model dims: hidden, ffn, num_layers and num_experts must be positive");
  if (top_k < 1 || top_k > num_experts)
    throw ConfigError("model dims: top_k must lie in [1, num_experts]");
  if (num_shared < 0) throw ConfigError("model dims: num_shared must be >= 0");
}

void SystemConfig::validate() const {
  require_positive(pcie_bw, "system.pcie_bw");
  require_positive(gpu_flops, "system.gpu_flops");
  require_positive(gpu_hbm_bw, "system.gpu_hbm_bw");
  if (gpu_mem_capacity == 0) throw ConfigError("system.gpu_mem_capacity must be positive");
  if (ndp_enabled) {
    require_positive(ndp_bw, "system.ndp_bw");
    require_positive(ndp_flops, "system.ndp_flops");
    if (ndp_capacity == 0) throw ConfigError("system.ndp_capacity must be positive");
  }
}

std::string_view to_string(CachePolicy p) { return p == CachePolicy::none ? "none" : "lru"; }

CachePolicy cache_policy_from_string(std::string_view s) {
  if (s == "none") return CachePolicy::none;
  if (s == "lru") return CachePolicy::lru;
  throw ConfigError("plan.cache_policy must be 'none' or 'lru' (got '" + std::string(s) + "')");
}

void TransferPlan::validate() const {
  if (expert_bits != 2 && expert_bits != 3 && expert_bits != 4 && expert_bits != 16)
    throw ConfigError("plan.expert_bits must be 2, 3, 4 or 16 (got " + std::to_string(expert_bits) +
                      ")");
  if (compensated_top_n < 0) throw ConfigError("plan.compensated_top_n must be >= 0");
  if (expert_bits == 16 && compensated_top_n > 0)
    throw ConfigError("plan.compensated_top_n requires expert_bits < 16");
  if (uniform_rank < 0) throw ConfigError("plan.rank must be >= 0");
  if (factor_bits < 1 || factor_bits > 8) throw ConfigError("plan.factor_bits must lie in [1, 8]");
}

bool ExpertLruCache::access(Index layer, Index expert, std::uint64_t bytes) {
  const Key key{layer, expert};
  if (auto it = index_.find(key); it != index_.end()) {
    lru_.splice(lru_.begin(), lru_, it->second);
    return true;
  }
  if (bytes > budget_) return false;
  while (used_ + bytes > budget_ && !lru_.empty()) {
    used_ -= lru_.back().second;
    index_.erase(lru_.back().first);
    lru_.pop_back();
  }
  lru_.emplace_front(key, bytes);
  index_[key] = lru_.begin();
  used_ += bytes;
  return false;
}

void ExpertLruCache::clear() {
  lru_.clear();
  index_.clear();
  used_ = 0;
}

OffloadSimulator::OffloadSimulator(ModelDims dims, SystemConfig sys, TransferPlan plan)
    : dims_(std::move(dims)), sys_(std::move(sys)), plan_(std::move(plan)) {
  dims_.validate();
  sys_.validate();
  plan_.validate();
  if (plan_.compensated_top_n > dims_.top_k)
    throw ConfigError("plan.compensated_top_n must not exceed top_k");
  expert_bytes_ = 3 * packed_size_bytes(static_cast<std::uint64_t>(dims_.hidden),
                                        static_cast<std::uint64_t>(dims_.ffn), plan_.expert_bits);
  if (plan_.cache_policy == CachePolicy::lru) {
    if (plan_.cache_budget_bytes < expert_bytes_)
      throw ConfigError("plan.cache_budget_bytes (" + std::to_string(plan_.cache_budget_bytes) +
                        ") is smaller than one expert (" + std::to_string(expert_bytes_) + " bytes)");
    if (plan_.cache_budget_bytes > sys_.gpu_mem_capacity)
      throw ConfigError("plan.cache_budget_bytes exceeds system.gpu_mem_capacity");
  }
  if (sys_.ndp_enabled && resident_bytes() > sys_.ndp_capacity)
    throw ConfigError("system.ndp_capacity (" + std::to_string(sys_.ndp_capacity) +
                      " bytes) is smaller than the resident experts (" +
                      std::to_string(resident_bytes()) + " bytes)");
  cache_ = ExpertLruCache(plan_.cache_policy == CachePolicy::lru ? plan_.cache_budget_bytes : 0);
}

Index OffloadSimulator::plan_rank(const MatrixKey& key) const {
  if (plan_.ranks) return plan_.ranks->rank_of(key);
  return plan_.uniform_rank;
}

std::uint64_t OffloadSimulator::compensator_bytes(Index layer, Index expert) const {
  if (plan_.expert_bits >= 16) return 0;
  std::uint64_t total = 0;
  for (Projection p : kProjections) {
    const auto [m, n] = projection_shape(p, dims_.hidden, dims_.ffn);
    const Index r = plan_rank({static_cast<int>(layer), static_cast<int>(expert), p});
    total += compensator_size_bytes(static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(n),
                                    static_cast<std::uint64_t>(r), plan_.factor_bits);
  }
  return total;
}

std::uint64_t OffloadSimulator::resident_bytes() const {
  std::uint64_t total = 0;
  for (Index l = 0; l < dims_.num_layers; ++l)
    for (Index e = 0; e < dims_.num_experts; ++e) total += expert_bytes_ + compensator_bytes(l, e);
  return total;
}

double OffloadSimulator::expert_flops() const {
  // Matmuls plus one flop per weight element for dequantization.
  const auto params = static_cast<double>(dims_.expert_params());
  return 2.0 * params + (plan_.expert_bits < 16 ? params : 0.0);
}

double OffloadSimulator::reconstruction_flops(Index layer, Index expert) const {
  double flops = 0.0;
  for (Projection p : kProjections) {
    const auto [m, n] = projection_shape(p, dims_.hidden, dims_.ffn);
    const Index r = plan_rank({static_cast<int>(layer), static_cast<int>(expert), p});
    flops += 2.0 * static_cast<double>(m + n) * static_cast<double>(r);
  }
  return flops;
}

double OffloadSimulator::gpu_compute_s(double flops, double hbm_bytes) const {
  return std::max(flops / sys_.gpu_flops, hbm_bytes / sys_.gpu_hbm_bw);
}

void OffloadSimulator::check_record(const TraceRecord& rec) const {
  if (rec.layer < 0 || rec.layer >= dims_.num_layers)
    throw FormatError("trace record layer " + std::to_string(rec.layer) + " outside model dims");
  for (Index id : rec.selected)
    if (id < 0 || id >= dims_.num_experts)
      throw FormatError("trace record expert id " + std::to_string(id) + " outside model dims");
}

Index OffloadSimulator::effective_top_n(const TraceRecord& rec) const {
  return std::min<Index>(plan_.compensated_top_n, static_cast<Index>(rec.selected.size()));
}

LayerCost OffloadSimulator::token_cost_gpu_only(const TraceRecord& rec) {
  check_record(rec);
  LayerCost c;
  const Index top_n = effective_top_n(rec);
  double recon = 0.0;
  for (Index id : rec.selected) {
    bool hit = false;
    if (plan_.cache_policy == CachePolicy::lru) {
      ++c.cache_lookups;
      hit = cache_.access(rec.layer, id, expert_bytes_);
      if (hit) ++c.cache_hits;
    }
    if (!hit) c.expert_bytes += expert_bytes_;
    if (contains(rec.selected, id, top_n)) {
      c.compensator_bytes += compensator_bytes(rec.layer, id);
      recon += reconstruction_flops(rec.layer, id);
    }
  }
  const auto active = static_cast<double>(rec.selected.size() + static_cast<std::size_t>(dims_.num_shared));
  c.transfer_s = static_cast<double>(c.weight_bytes()) / sys_.pcie_bw;
  c.compute_s = gpu_compute_s(active * expert_flops() + recon,
                              active * static_cast<double>(expert_bytes_) +
                                  static_cast<double>(c.compensator_bytes));
  c.latency_s = sys_.overlap ? std::max(c.transfer_s, c.compute_s) : c.transfer_s + c.compute_s;
  return c;
}

LayerCost OffloadSimulator::token_cost_gpu_ndp(const TraceRecord& rec) {
  if (!sys_.ndp_enabled) throw ConfigError("token_cost_gpu_ndp requires system.ndp_enabled");
  check_record(rec);
  LayerCost c;
  const Index top_n = effective_top_n(rec);
  double recon = 0.0;
  Index gpu_experts = dims_.num_shared;
  for (Index id : rec.selected) {
    if (contains(rec.selected, id, top_n)) {
      bool hit = false;
      if (plan_.cache_policy == CachePolicy::lru) {
        ++c.cache_lookups;
        hit = cache_.access(rec.layer, id, expert_bytes_);
        if (hit) ++c.cache_hits;
      }
      if (!hit) c.expert_bytes += expert_bytes_;
      c.compensator_bytes += compensator_bytes(rec.layer, id);
      recon += reconstruction_flops(rec.layer, id);
      ++gpu_experts;
    } else {
      c.ndp_read_bytes += expert_bytes_;
      c.ndp_compute_s += std::max(static_cast<double>(expert_bytes_) / sys_.ndp_bw,
                                  expert_flops() / sys_.ndp_flops);
      // fp16 activation to the device and the expert output back
      c.activation_bytes += 2ull * 2ull * static_cast<std::uint64_t>(dims_.hidden);
    }
  }
  c.transfer_s = static_cast<double>(c.weight_bytes() + c.activation_bytes) / sys_.pcie_bw;
  const auto g = static_cast<double>(gpu_experts);
  c.compute_s = gpu_compute_s(g * expert_flops() + recon,
                              g * static_cast<double>(expert_bytes_) +
                                  static_cast<double>(c.compensator_bytes));
  const double gpu_stream =
      sys_.overlap ? std::max(c.transfer_s, c.compute_s) : c.transfer_s + c.compute_s;
  c.latency_s = sys_.overlap ? std::max(gpu_stream, c.ndp_compute_s) : gpu_stream + c.ndp_compute_s;
  return c;
}

LayerCost OffloadSimulator::token_cost(const TraceRecord& rec) {
  return sys_.ndp_enabled ? token_cost_gpu_ndp(rec) : token_cost_gpu_only(rec);
}

LayerCost OffloadSimulator::prefill_layer(Index layer, const std::vector<Index>& touched,
                                          Index tokens) const {
  // Batched pass on the GPU: every touched expert is fetched once.
  LayerCost c;
  double recon = 0.0;
  for (Index id : touched) {
    c.expert_bytes += expert_bytes_;
    if (plan_.compensated_top_n > 0) {
      c.compensator_bytes += compensator_bytes(layer, id);
      recon += reconstruction_flops(layer, id);
    }
  }
  const auto per_token_active = static_cast<double>(dims_.top_k + dims_.num_shared);
  const double flops = static_cast<double>(tokens) * per_token_active * 2.0 *
                           static_cast<double>(dims_.expert_params()) +
                       static_cast<double>(touched.size()) *
                           (expert_flops() - 2.0 * static_cast<double>(dims_.expert_params())) +
                       static_cast<double>(tokens) * recon;
  c.transfer_s = static_cast<double>(c.weight_bytes()) / sys_.pcie_bw;
  c.compute_s = gpu_compute_s(flops, static_cast<double>(c.weight_bytes()));
  c.latency_s = sys_.overlap ? std::max(c.transfer_s, c.compute_s) : c.transfer_s + c.compute_s;
  return c;
}

SimReport OffloadSimulator::simulate(const RoutingTrace& trace, const SimulateOptions& opts) {
  if (opts.output_len < 1) throw ConfigError("simulate.output_len must be >= 1");
  if (opts.input_len < 0) throw ConfigError("simulate.input_len must be >= 0");
  cache_.clear();

  // Group records per token in order of first appearance; a token is complete
  // when it has one record for every layer.
  std::vector<Index> token_order;
  std::map<Index, std::vector<const TraceRecord*>> by_token;
  for (const TraceRecord& r : trace) {
    check_record(r);
    auto [it, inserted] = by_token.try_emplace(r.token);
    if (inserted) token_order.push_back(r.token);
    it->second.push_back(&r);
  }
  std::vector<std::vector<const TraceRecord*>> tokens;
  for (Index t : token_order) {
    auto recs = by_token[t];
    std::sort(recs.begin(), recs.end(),
              [](const TraceRecord* a, const TraceRecord* b) { return a->layer < b->layer; });
    bool complete = static_cast<Index>(recs.size()) == dims_.num_layers;
    for (std::size_t l = 0; complete && l < recs.size(); ++l)
      complete = recs[l]->layer == static_cast<Index>(l);
    if (!complete) break;
    tokens.push_back(std::move(recs));
    if (static_cast<Index>(tokens.size()) == opts.output_len) break;
  }
  if (static_cast<Index>(tokens.size()) < opts.output_len)
    throw FormatError("truncated trace: need " + std::to_string(opts.output_len) + " tokens x " +
                      std::to_string(dims_.num_layers) + " layers, found " +
                      std::to_string(tokens.size()) + " complete tokens");

  SimReport rep;
  rep.output_len = opts.output_len;

  if (opts.prefill && opts.input_len > 0) {
    const auto lookahead = std::min<std::size_t>(static_cast<std::size_t>(opts.input_len), tokens.size());
    for (Index l = 0; l < dims_.num_layers; ++l) {
      std::set<Index> touched;
      for (std::size_t t = 0; t < lookahead; ++t)
        for (Index id : tokens[t][static_cast<std::size_t>(l)]->selected) touched.insert(id);
      const LayerCost c =
          prefill_layer(l, std::vector<Index>(touched.begin(), touched.end()), opts.input_len);
      rep.prefill_s += c.latency_s;
      rep.prefill_bytes += c.weight_bytes();
    }
  }

  std::uint64_t hits = 0;
  std::uint64_t lookups = 0;
  for (const auto& recs : tokens) {
    for (const TraceRecord* r : recs) {
      const LayerCost c = token_cost(*r);
      rep.decode_s += c.latency_s;
      rep.transfer_s += c.transfer_s;
      rep.compute_s += c.compute_s;
      rep.ndp_compute_s += c.ndp_compute_s;
      rep.expert_bytes += c.expert_bytes;
      rep.compensator_bytes += c.compensator_bytes;
      rep.activation_bytes += c.activation_bytes;
      hits += c.cache_hits;
      lookups += c.cache_lookups;
    }
  }
  const auto n = static_cast<double>(opts.output_len);
  rep.latency_per_token_s = rep.decode_s / n;
  rep.transfer_s /= n;
  rep.compute_s /= n;
  rep.ndp_compute_s /= n;
  rep.total_bytes_moved = rep.prefill_bytes + rep.expert_bytes + rep.compensator_bytes;
  rep.cache_hit_rate = lookups > 0 ? static_cast<double>(hits) / static_cast<double>(lookups) : 0.0;
  rep.tokens_per_s = n / (rep.prefill_s + rep.decode_s);
  return rep;
}

}  // namespace moelrc
