#include "moelrc/compress.hpp"

#include "moelrc/parallel.hpp"

#include <algorithm>

namespace moelrc {

namespace {

CompressResult build(const MoEModel& model, const CompressOptions& opts, KurtosisProfile profile,
                     RankAllocation allocation) {
  model.validate();
  CompressResult result;
  CompressedModel& out = result.model;
  out.header.dims = {model.hidden, model.ffn, model.num_layers(), model.num_experts(),
                     model.num_shared()};
  out.header.quant = opts.quant;
  out.header.factors = opts.factors;
  out.header.buckets = allocation.buckets;
  out.header.avg_budget = allocation.avg_budget;
  out.header.scope = allocation.scope;
  out.header.seed = opts.seed;

  out.projections.resize(profile.entries.size());
  parallel_for(profile.entries.size(), resolve_threads(opts.threads), [&](std::size_t i) {
    const KurtosisEntry& entry = profile.entries[i];
    const Matrix& w = model.layers[static_cast<std::size_t>(entry.key.layer)]
                          .expert(entry.key.expert)
                          .projection(entry.key.projection);
    ProjectionArtifact& art = out.projections[i];
    art.key = entry.key;
    art.kurtosis = entry.kurtosis;
    art.rank = allocation.rank_of(entry.key);
    art.weights = quantize(w, opts.quant);
    art.compensator = build_compensator(w, art.weights, art.rank, entry.key.projection, opts.factors);
  });
  std::sort(out.projections.begin(), out.projections.end(),
            [](const auto& a, const auto& b) { return a.key < b.key; });

  result.profile = std::move(profile);
  result.allocation = std::move(allocation);
  return result;
}

}  // namespace

CompressResult compress_model(const MoEModel& model, const CompressOptions& opts) {
  opts.quant.validate();
  KurtosisProfile profile = kurtosis_profile(model);
  RankAllocation alloc = allocate_ranks(profile, opts.avg_budget, opts.buckets, opts.scope);
  return build(model, opts, std::move(profile), std::move(alloc));
}

CompressResult compress_model_uniform(const MoEModel& model, const CompressOptions& opts,
                                      Index rank) {
  opts.quant.validate();
  KurtosisProfile profile = kurtosis_profile(model);
  RankAllocation alloc;
  alloc.buckets = {0, rank};
  alloc.avg_budget = rank;
  alloc.scope = opts.scope;
  for (const KurtosisEntry& e : profile.entries) alloc.ranks[e.key] = std::min(rank, e.max_rank);
  return build(model, opts, std::move(profile), std::move(alloc));
}

}  // namespace moelrc
