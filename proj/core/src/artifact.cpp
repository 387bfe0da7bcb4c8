#include "moelrc/artifact.hpp"

#include "moelrc/moe_model.hpp"

#include <algorithm>
#include <set>

namespace moelrc {

const ProjectionArtifact* CompressedModel::find(const MatrixKey& key) const {
  const auto it = std::lower_bound(
      projections.begin(), projections.end(), key,
      [](const ProjectionArtifact& a, const MatrixKey& k) { return a.key < k; });
  if (it == projections.end() || it->key != key) return nullptr;
  return &*it;
}

void CompressedModel::validate() const {
  const ModelShape& d = header.dims;
  if (d.hidden <= 0 || d.ffn <= 0 || d.num_layers <= 0 || d.num_experts <= 0 || d.num_shared < 0)
    throw FormatError("artifact header: invalid model_dims");
  if (!std::is_sorted(projections.begin(), projections.end(),
                      [](const auto& a, const auto& b) { return a.key < b.key; }))
    throw FormatError("artifact: projection records are not sorted by key");

  std::set<MatrixKey> seen;
  for (const ProjectionArtifact& p : projections) {
    if (p.key.layer < 0 || p.key.layer >= d.num_layers || p.key.expert < 0 ||
        p.key.expert >= d.experts_per_layer())
      throw FormatError("artifact: record " + p.key.str() + " outside header dims");
    if (!seen.insert(p.key).second) throw FormatError("artifact: duplicate record " + p.key.str());
    const auto [m, n] = projection_shape(p.key.projection, d.hidden, d.ffn);
    if (p.weights.rows != m || p.weights.cols != n)
      throw FormatError("artifact: weight shape of " + p.key.str() + " inconsistent with header");
    if (p.compensator.rank != p.rank)
      throw FormatError("artifact: compensator rank of " + p.key.str() + " != recorded rank");
    if (p.rank > 0 && (p.compensator.rows != m || p.compensator.cols != n))
      throw FormatError("artifact: compensator shape of " + p.key.str() + " inconsistent");
    try {
      p.weights.validate();
      p.compensator.validate();
    } catch (const std::invalid_argument& e) {
      throw FormatError("artifact: " + p.key.str() + ": " + e.what());
    }
  }
  const auto expected = static_cast<std::size_t>(d.num_layers * d.experts_per_layer() * 3);
  if (seen.size() != expected)
    throw FormatError("artifact: expected " + std::to_string(expected) + " projection records, found " +
                      std::to_string(seen.size()));
}

}  // namespace moelrc
