#include "moelrc/synthetic.hpp"

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace moelrc {

namespace {

constexpr std::uint64_t kGateStream = 0x6761746521ULL;
constexpr std::uint64_t kTokenStream = 0x746f6b656eULL;
constexpr std::uint64_t kSharedOffset = 1u << 20;

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Matrix gate_matrix(std::uint64_t seed, Index hidden, Index num_experts, double skew) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix g(hidden, num_experts);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = normal(rng);
  if (hidden >= num_experts) {
    Eigen::MatrixXd a = g;
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(hidden, num_experts);
    g = q;
  } else {
    for (Index j = 0; j < num_experts; ++j) g.col(j).normalize();
  }
  return g * skew;
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

void SyntheticModelSpec::validate() const {
  if (hidden <= 0 || ffn <= 0 || num_layers <= 0 || num_experts <= 0)
    throw std::invalid_argument("model dims (hidden, ffn, num_layers, num_experts) must be positive");
  if (num_shared < 0) throw std::invalid_argument("model.num_shared must be >= 0");
  if (tail_dofs.empty()) throw std::invalid_argument("model.tail_dofs must not be empty");
  for (double dof : tail_dofs)
    if (!(dof > 2.0))
      throw std::invalid_argument("model.tail_dofs: dof must be > 2 (got " + std::to_string(dof) +
                                  ")");
  if (!(router_skew >= 0.0) || !std::isfinite(router_skew))
    throw std::invalid_argument("model.router_skew must be finite and >= 0");
}

double router_skew_preset(std::string_view name) {
  if (name == "uniform") return 0.0;
  if (name == "mixtral-like") return 1.4;
  if (name == "mixtral-8x22b-like") return 1.75;
  if (name == "deepseek-like") return 1.0;
  throw ConfigError("unknown router preset '" + std::string(name) + "'");
}

Matrix student_t_matrix(std::uint64_t seed, Index rows, Index cols, double dof, double scale) {
  std::mt19937_64 rng(seed);
  Matrix m(rows, cols);
  if (std::isinf(dof)) {
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng) * scale;
  } else {
    std::student_t_distribution<double> t(dof);
    const double unit = std::sqrt((dof - 2.0) / dof);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = t(rng) * unit * scale;
  }
  return m;
}

MoEModel gen_synthetic_model(const SyntheticModelSpec& spec) {
  spec.validate();
  MoEModel model;
  model.hidden = spec.hidden;
  model.ffn = spec.ffn;
  model.layers.resize(static_cast<std::size_t>(spec.num_layers));

  const double in_scale = 1.0 / std::sqrt(static_cast<double>(spec.hidden));
  const double out_scale = 1.0 / std::sqrt(static_cast<double>(spec.ffn));
  auto make_expert = [&](Index layer, std::uint64_t id, double dof) {
    ExpertWeights e;
    for (Projection p : kProjections) {
      const auto [m, n] = projection_shape(p, spec.hidden, spec.ffn);
      const double s = p == Projection::w2 ? out_scale : in_scale;
      e.projection(p) = student_t_matrix(
          mix_seed(spec.seed, static_cast<std::uint64_t>(layer), id, static_cast<std::uint64_t>(p)),
          m, n, dof, s);
    }
    return e;
  };

  const auto dofs = spec.tail_dofs.size();
  for (Index l = 0; l < spec.num_layers; ++l) {
    MoELayer& layer = model.layers[static_cast<std::size_t>(l)];
    layer.gate = gate_matrix(mix_seed(spec.seed, kGateStream, static_cast<std::uint64_t>(l)),
                             spec.hidden, spec.num_experts, spec.router_skew);
    for (Index e = 0; e < spec.num_experts; ++e)
      layer.experts.push_back(make_expert(l, static_cast<std::uint64_t>(e),
                                          spec.tail_dofs[static_cast<std::size_t>(e) % dofs]));
    for (Index s = 0; s < spec.num_shared; ++s)
      layer.shared.push_back(
          make_expert(l, kSharedOffset + static_cast<std::uint64_t>(s),
                      spec.tail_dofs[static_cast<std::size_t>(spec.num_experts + s) % dofs]));
  }
  return model;
}

std::vector<Matrix> gen_synthetic_gates(std::uint64_t seed, Index hidden, Index num_layers,
                                        Index num_experts, double router_skew) {
  if (hidden <= 0 || num_layers <= 0 || num_experts <= 0)
    throw std::invalid_argument("gen_synthetic_gates: dims must be positive");
  std::vector<Matrix> gates;
  gates.reserve(static_cast<std::size_t>(num_layers));
  for (Index l = 0; l < num_layers; ++l)
    gates.push_back(gate_matrix(mix_seed(seed, kGateStream, static_cast<std::uint64_t>(l)), hidden,
                                num_experts, router_skew));
  return gates;
}

Matrix gen_tokens(std::uint64_t seed, Index count, Index hidden) {
  std::mt19937_64 rng(mix_seed(seed, kTokenStream));
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix t(count, hidden);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = normal(rng);
  return t;
}

}  // namespace moelrc
