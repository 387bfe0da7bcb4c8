#include "moelrc/rank_allocator.hpp"

#include "moelrc/compensator.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace moelrc {

KurtosisValue kurtosis(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("kurtosis: empty input");
  const auto d = static_cast<long double>(values.size());
  long double sum = 0.0L;
  for (double v : values) sum += v;
  const long double mean = sum / d;
  long double m2 = 0.0L;
  long double m4 = 0.0L;
  for (double v : values) {
    const long double c = v - mean;
    const long double c2 = c * c;
    m2 += c2;
    m4 += c2 * c2;
  }
  m2 /= d;
  m4 /= d;
  if (m2 == 0.0L) return {0.0, true};
  return {static_cast<double>(m4 / (m2 * m2)), false};
}

KurtosisValue kurtosis(const Matrix& w) {
  return kurtosis(std::span<const double>(w.data(), static_cast<std::size_t>(w.size())));
}

std::string_view to_string(AllocationScope s) {
  return s == AllocationScope::global ? "global" : "per_layer";
}

AllocationScope allocation_scope_from_string(std::string_view s) {
  if (s == "global") return AllocationScope::global;
  if (s == "per_layer") return AllocationScope::per_layer;
  throw ConfigError("allocation.scope must be 'global' or 'per_layer' (got '" + std::string(s) +
                    "')");
}

Index RankAllocation::total_rank() const {
  Index total = 0;
  for (const auto& [key, r] : ranks) total += r;
  return total;
}

Index RankAllocation::rank_of(const MatrixKey& key) const {
  const auto it = ranks.find(key);
  return it == ranks.end() ? 0 : it->second;
}

std::vector<std::size_t> allocation_order(const KurtosisProfile& profile) {
  std::vector<std::size_t> order(profile.entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const KurtosisEntry& x = profile.entries[a];
    const KurtosisEntry& y = profile.entries[b];
    if (x.kurtosis != y.kurtosis) return x.kurtosis > y.kurtosis;
    return x.key < y.key;
  });
  return order;
}

RankAllocation allocate_ranks(const KurtosisProfile& profile, Index avg_budget,
                              std::vector<Index> buckets, AllocationScope scope) {
  if (avg_budget < 0) throw std::invalid_argument("allocation.avg_budget must be >= 0");
  std::sort(buckets.begin(), buckets.end());
  buckets.erase(std::unique(buckets.begin(), buckets.end()), buckets.end());
  if (buckets.empty() || buckets.front() != 0)
    throw std::invalid_argument("allocation.buckets must contain 0 and no negative ranks");

  RankAllocation alloc;
  alloc.buckets = buckets;
  alloc.avg_budget = avg_budget;
  alloc.scope = scope;

  // Budget pools: one global pool, or one per layer.
  std::map<int, Index> pool;
  for (const KurtosisEntry& e : profile.entries) {
    const int id = scope == AllocationScope::global ? 0 : e.key.layer;
    pool[id] += avg_budget;
  }

  for (std::size_t idx : allocation_order(profile)) {
    const KurtosisEntry& e = profile.entries[idx];
    Index& remaining = pool[scope == AllocationScope::global ? 0 : e.key.layer];
    Index chosen = 0;
    for (auto it = buckets.rbegin(); it != buckets.rend(); ++it) {
      if (*it <= remaining && *it <= e.max_rank) {
        chosen = *it;
        break;
      }
    }
    remaining -= chosen;
    if (!alloc.ranks.emplace(e.key, chosen).second)
      throw std::invalid_argument("allocate_ranks: duplicate entry " + e.key.str());
  }
  return alloc;
}

KurtosisProfile kurtosis_profile(const MoEModel& model, bool cap_at_matrix_rank) {
  KurtosisProfile profile;
  profile.elements_per_matrix = model.hidden * model.ffn;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const MoELayer& layer = model.layers[static_cast<std::size_t>(l)];
    for (int id = 0; id < static_cast<int>(model.experts_per_layer()); ++id) {
      for (Projection p : kProjections) {
        const Matrix& w = layer.expert(id).projection(p);
        KurtosisEntry e;
        e.key = {static_cast<int>(l), id, p};
        e.kurtosis = kurtosis(w).value;
        if (cap_at_matrix_rank) e.max_rank = std::min(w.rows(), w.cols());
        profile.entries.push_back(e);
      }
    }
  }
  return profile;
}

std::string allocation_to_json(const RankAllocation& alloc, const KurtosisProfile& profile) {
  nlohmann::json j;
  j["avg_budget"] = alloc.avg_budget;
  j["buckets"] = alloc.buckets;
  j["scope"] = std::string(to_string(alloc.scope));
  j["total_rank"] = alloc.total_rank();
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t idx : allocation_order(profile)) {
    const KurtosisEntry& e = profile.entries[idx];
    rows.push_back({{"layer", e.key.layer},
                    {"expert", e.key.expert},
                    {"projection", std::string(to_string(e.key.projection))},
                    {"kurtosis", e.kurtosis},
                    {"rank", alloc.rank_of(e.key)}});
  }
  j["entries"] = rows;
  return j.dump(2) + "\n";
}

RankAllocation allocation_from_json(const std::string& text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    RankAllocation alloc;
    alloc.avg_budget = j.at("avg_budget").get<Index>();
    alloc.buckets = j.at("buckets").get<std::vector<Index>>();
    alloc.scope = allocation_scope_from_string(j.value("scope", std::string("global")));
    for (const auto& row : j.at("entries")) {
      const MatrixKey key{row.at("layer").get<int>(), row.at("expert").get<int>(),
                          projection_from_string(row.at("projection").get<std::string>())};
      alloc.ranks[key] = row.at("rank").get<Index>();
    }
    return alloc;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("allocation json: ") + e.what());
  }
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: length mismatch");
  if (x.size() < 2) return {0.0, true};
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {sxy / std::sqrt(sxx * syy), false};
}

KurtosisErrorReport kurtosis_error_report(const MoEModel& model, const QuantConfig& cfg) {
  KurtosisErrorReport report;
  std::vector<double> ks;
  std::vector<double> errs;
  for (Index l = 0; l < model.num_layers(); ++l) {
    const MoELayer& layer = model.layers[static_cast<std::size_t>(l)];
    for (int id = 0; id < static_cast<int>(model.experts_per_layer()); ++id) {
      for (Projection p : kProjections) {
        const Matrix& w = layer.expert(id).projection(p);
        ResidualStats s;
        s.key = {static_cast<int>(l), id, p};
        s.kurtosis = kurtosis(w).value;
        s.rel_fro = relative_residual(w, quantize(w, cfg));
        ks.push_back(s.kurtosis);
        errs.push_back(s.rel_fro);
        report.stats.push_back(s);
      }
    }
  }
  report.correlation = spearman(ks, errs);
  // Correlation is taken across experts; a single expert gives no evidence.
  if (model.num_layers() * model.experts_per_layer() < 2) report.correlation = {0.0, true};
  return report;
}

}  // namespace moelrc
