#include "moelrc/moe_model.hpp"

#include <cmath>
#include <stdexcept>

namespace moelrc {

const Matrix& ExpertWeights::projection(Projection p) const {
  switch (p) {
    case Projection::w1:
      return w1;
    case Projection::w2:
      return w2;
    case Projection::w3:
      return w3;
  }
  throw std::logic_error("bad projection");
}

Matrix& ExpertWeights::projection(Projection p) {
  return const_cast<Matrix&>(std::as_const(*this).projection(p));
}

const ExpertWeights& MoELayer::expert(int id) const {
  const auto n = static_cast<int>(experts.size());
  if (id < 0 || id >= n + static_cast<int>(shared.size()))
    throw std::out_of_range("expert id " + std::to_string(id) + " out of range");
  return id < n ? experts[static_cast<std::size_t>(id)]
                : shared[static_cast<std::size_t>(id - n)];
}

Index MoEModel::num_experts() const {
  return layers.empty() ? 0 : static_cast<Index>(layers.front().experts.size());
}

Index MoEModel::num_shared() const {
  return layers.empty() ? 0 : static_cast<Index>(layers.front().shared.size());
}

void MoEModel::validate() const {
  if (hidden <= 0 || ffn <= 0) throw std::invalid_argument("model: dims must be positive");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MoELayer& layer = layers[l];
    const std::string where = "model layer " + std::to_string(l) + ": ";
    if (layer.experts.size() != static_cast<std::size_t>(num_experts()) ||
        layer.shared.size() != static_cast<std::size_t>(num_shared()))
      throw std::invalid_argument(where + "expert count differs from layer 0");
    if (layer.gate.rows() != hidden || layer.gate.cols() != layer.num_experts())
      throw std::invalid_argument(where + "gate must be hidden x num_experts");
    for (int id = 0; id < static_cast<int>(experts_per_layer()); ++id) {
      for (Projection p : kProjections) {
        const auto [m, n] = projection_shape(p, hidden, ffn);
        const Matrix& w = layer.expert(id).projection(p);
        if (w.rows() != m || w.cols() != n)
          throw std::invalid_argument(where + "expert " + std::to_string(id) + " " +
                                      std::string(to_string(p)) + " has wrong shape");
      }
    }
  }
}

namespace {
bool same(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && a == b;
}
bool same(const ExpertWeights& a, const ExpertWeights& b) {
  return same(a.w1, b.w1) && same(a.w2, b.w2) && same(a.w3, b.w3);
}
}  // namespace

bool MoEModel::operator==(const MoEModel& other) const {
  if (hidden != other.hidden || ffn != other.ffn || layers.size() != other.layers.size())
    return false;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const MoELayer& a = layers[l];
    const MoELayer& b = other.layers[l];
    if (!same(a.gate, b.gate)) return false;
    if (a.experts.size() != b.experts.size() || a.shared.size() != b.shared.size()) return false;
    for (std::size_t e = 0; e < a.experts.size(); ++e)
      if (!same(a.experts[e], b.experts[e])) return false;
    for (std::size_t e = 0; e < a.shared.size(); ++e)
      if (!same(a.shared[e], b.shared[e])) return false;
  }
  return true;
}

double silu(double v) { return v / (1.0 + std::exp(-v)); }

Vector expert_forward(const ExpertWeights& e, const Vector& x) {
  const Eigen::RowVectorXd xr = x.transpose();
  Eigen::RowVectorXd h1 = xr * e.w1;
  const Eigen::RowVectorXd h3 = xr * e.w3;
  for (Index i = 0; i < h1.size(); ++i) h1(i) = silu(h1(i)) * h3(i);
  return (h1 * e.w2).transpose();
}

}  // namespace moelrc
