#include "moelrc/compress.hpp"
#include "moelrc/moe_engine.hpp"
#include "moelrc/synthetic.hpp"
#include "moelrc/trace.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace moelrc;

namespace {

SyntheticModelSpec toy(std::uint64_t seed, Index shared = 0) {
  SyntheticModelSpec s;
  s.seed = seed;
  s.num_shared = shared;
  s.tail_dofs = {3, 4, 6, 10, kGaussianDof};
  return s;
}

CompressOptions int2_opts() {
  CompressOptions o;
  o.quant.bits = 2;
  o.avg_budget = 32;
  o.threads = 2;
  return o;
}

// Expert output computed element by element.
Vector oracle_expert(const ExpertWeights& e, const Vector& x) {
  const Index ffn = e.w1.cols();
  const Index hidden = e.w2.cols();
  std::vector<double> h(static_cast<std::size_t>(ffn));
  for (Index j = 0; j < ffn; ++j) {
    double a = 0, b = 0;
    for (Index i = 0; i < x.size(); ++i) {
      a += x(i) * e.w1(i, j);
      b += x(i) * e.w3(i, j);
    }
    h[static_cast<std::size_t>(j)] = a / (1.0 + std::exp(-a)) * b;
  }
  Vector y(hidden);
  for (Index k = 0; k < hidden; ++k) {
    double s = 0;
    for (Index j = 0; j < ffn; ++j) s += h[static_cast<std::size_t>(j)] * e.w2(j, k);
    y(k) = s;
  }
  return y;
}

ForwardConfig cfg(Index k, Index n) {
  ForwardConfig c;
  c.top_k = k;
  c.top_n = n;
  return c;
}

}  // namespace

TEST(Softmax, SumsToOneAndIsStable) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Index n = 1 + static_cast<Index>(rng() % 70);
    Vector logits = test::gaussian(rng(), n, 1, 1.0 + static_cast<double>(rng() % 500));
    const Vector w = softmax(logits);
    ASSERT_NEAR(w.sum(), 1.0, 1e-9);
    ASSERT_TRUE((w.array() >= 0).all());
  }
  Vector big(2);
  big << 1000.0, 1000.0 + std::log(3.0);
  EXPECT_NEAR(softmax(big)(1), 0.75, 1e-12);
}

TEST(Route, SingleExpert) {
  const Matrix gate = Matrix::Constant(3, 1, 0.7);
  const Routing r = route(Vector::Ones(3), gate, cfg(1, 1));
  EXPECT_DOUBLE_EQ(r.weights(0), 1.0);
  EXPECT_EQ(r.selected, (std::vector<Index>{0}));
  EXPECT_EQ(r.compensated, (std::vector<Index>{0}));
}

TEST(Route, TwoLogitSoftmax) {
  Matrix gate(1, 2);
  gate << std::log(2.0), 0.0;
  const Routing r = route(Vector::Ones(1), gate, cfg(2, 0));
  EXPECT_NEAR(r.weights(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(r.weights(1), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(r.selected, (std::vector<Index>{0, 1}));
  EXPECT_TRUE(r.compensated.empty());
}

TEST(Route, EqualLogitsTieToLowerId) {
  const Routing r = route(Vector::Ones(2), Matrix::Zero(2, 4), cfg(2, 1));
  for (Index i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(r.weights(i), 0.25);
  EXPECT_EQ(r.selected, (std::vector<Index>{0, 1}));
  EXPECT_EQ(r.compensated, (std::vector<Index>{0}));
}

TEST(Route, Renormalize) {
  Matrix gate(1, 3);
  gate << 0.0, std::log(3.0), std::log(2.0);
  ForwardConfig c = cfg(2, 1);
  c.renormalize_topk = true;
  const Routing r = route(Vector::Ones(1), gate, c);
  EXPECT_EQ(r.selected, (std::vector<Index>{1, 2}));
  EXPECT_NEAR(r.weights(1), 0.6, 1e-15);
  EXPECT_NEAR(r.weights(2), 0.4, 1e-15);
  EXPECT_EQ(r.weights(0), 0.0);
}

TEST(Route, Errors) {
  EXPECT_THROW(route(Vector::Ones(3), Matrix::Zero(2, 4), cfg(2, 1)), std::invalid_argument);
  EXPECT_THROW(route(Vector::Ones(2), Matrix::Zero(2, 4), cfg(5, 1)), std::invalid_argument);
  EXPECT_THROW(route(Vector::Ones(2), Matrix::Zero(2, 4), cfg(2, 3)), std::invalid_argument);
  EXPECT_THROW(route(Vector::Ones(2), Matrix::Zero(2, 4), cfg(0, 0)), std::invalid_argument);
}

// Property: selected = top-k by weight with lower-id ties, compensated is its
// leading top-n, both sorted by weight descending.
TEST(RouteProperty, SelectionInvariants) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const Index experts = 1 + static_cast<Index>(rng() % 16);
    const Index hidden = 1 + static_cast<Index>(rng() % 8);
    const Index k = 1 + static_cast<Index>(rng() % experts);
    const Index n = static_cast<Index>(rng() % (k + 1));
    Matrix gate = test::gaussian(rng(), hidden, experts);
    if (trial % 4 == 0) gate = gate.array().round();  // force ties
    const Routing r = route(test::gaussian(rng(), hidden, 1), gate, cfg(k, n));
    ASSERT_EQ(static_cast<Index>(r.selected.size()), k);
    ASSERT_EQ(static_cast<Index>(r.compensated.size()), n);
    ASSERT_TRUE(std::equal(r.compensated.begin(), r.compensated.end(), r.selected.begin()));
    for (std::size_t i = 1; i < r.selected.size(); ++i) {
      const double a = r.weights(r.selected[i - 1]);
      const double b = r.weights(r.selected[i]);
      ASSERT_TRUE(a > b || (a == b && r.selected[i - 1] < r.selected[i]));
    }
    for (Index id = 0; id < experts; ++id) {
      if (std::find(r.selected.begin(), r.selected.end(), id) != r.selected.end()) continue;
      const Index last = r.selected.back();
      ASSERT_TRUE(r.weights(id) < r.weights(last) || (r.weights(id) == r.weights(last) && id > last));
    }
  }
}

TEST(ExpertForward, MatchesElementwiseOracle) {
  const MoEModel m = gen_synthetic_model(toy(3));
  const Vector x = test::gaussian(4, m.hidden, 1);
  for (int id = 0; id < 3; ++id) {
    const Vector got = expert_forward(m.layers[0].experts[static_cast<std::size_t>(id)], x);
    const Vector want = oracle_expert(m.layers[0].experts[static_cast<std::size_t>(id)], x);
    EXPECT_LE((got - want).norm(), 1e-12 * want.norm());
  }
  EXPECT_NEAR(silu(0.0), 0.0, 0.0);
  EXPECT_NEAR(silu(2.0), 2.0 / (1.0 + std::exp(-2.0)), 1e-15);
}

TEST(Forward, ReferenceMixesSelectedAndShared) {
  const MoEModel m = gen_synthetic_model(toy(5, 1));
  const Vector x = test::gaussian(6, m.hidden, 1);
  const ForwardConfig c = cfg(2, 1);
  const Routing r = route(x, m.layers[1].gate, c);
  Vector want = oracle_expert(m.layers[1].shared[0], x);
  for (Index id : r.selected)
    want += r.weights(id) * oracle_expert(m.layers[1].experts[static_cast<std::size_t>(id)], x);
  const Vector got = forward(x, m, 1, c, ForwardMode::reference);
  EXPECT_LE((got - want).norm(), 1e-12 * want.norm());
}

TEST(Forward, NonReferenceModesNeedArtifacts) {
  const MoEModel m = gen_synthetic_model(toy(5));
  const Vector x = test::gaussian(6, m.hidden, 1);
  EXPECT_THROW(forward(x, m, 0, cfg(2, 1), ForwardMode::quantized), std::invalid_argument);
  const ResolvedWeights empty;
  EXPECT_THROW(forward(x, m, 0, cfg(2, 1), ForwardMode::compensated, &empty), std::invalid_argument);
  EXPECT_THROW(forward(x, m, 7, cfg(2, 1), ForwardMode::reference), std::invalid_argument);
}

TEST(Forward, TopNZeroEqualsQuantizedBitExactly) {
  const MoEModel m = gen_synthetic_model(toy(8));
  const ResolvedWeights w(compress_model(m, int2_opts()).model);
  const Matrix tokens = gen_tokens(9, 20, m.hidden);
  for (Index t = 0; t < tokens.rows(); ++t) {
    const Vector x = tokens.row(t).transpose();
    for (Index l = 0; l < m.num_layers(); ++l) {
      const Vector q = forward(x, m, l, cfg(2, 0), ForwardMode::quantized, &w);
      const Vector c = forward(x, m, l, cfg(2, 0), ForwardMode::compensated, &w);
      ASSERT_TRUE((q.array() == c.array()).all());
    }
  }
}

TEST(Forward, FullRankLosslessCompensationRecoversReference) {
  const MoEModel m = gen_synthetic_model(toy(10, 1));
  CompressOptions o = int2_opts();
  o.factors.factor_group_size = 1;
  const CompressedModel a = compress_model_uniform(m, o, 64).model;
  const ResolvedWeights w(a);
  const Matrix tokens = gen_tokens(11, 10, m.hidden);
  for (Index t = 0; t < tokens.rows(); ++t) {
    const Vector x = tokens.row(t).transpose();
    for (Index l = 0; l < m.num_layers(); ++l) {
      const Vector ref = forward(x, m, l, cfg(2, 2), ForwardMode::reference);
      const Vector c = forward(x, m, l, cfg(2, 2), ForwardMode::compensated, &w);
      ASSERT_LE((c - ref).norm(), 1e-5 * ref.norm());
    }
  }
}

TEST(Forward, SharedCompensationIsConfigurable) {
  const MoEModel m = gen_synthetic_model(toy(12, 2));
  const ResolvedWeights w(compress_model(m, int2_opts()).model);
  ASSERT_TRUE(w.has_compensator(0, m.num_experts()));
  const Vector x = test::gaussian(13, m.hidden, 1);
  ForwardConfig on = cfg(2, 0);
  ForwardConfig off = on;
  off.compensate_shared = false;
  const Vector q = forward(x, m, 0, on, ForwardMode::quantized, &w);
  EXPECT_TRUE((forward(x, m, 0, off, ForwardMode::compensated, &w).array() == q.array()).all());
  EXPECT_FALSE((forward(x, m, 0, on, ForwardMode::compensated, &w).array() == q.array()).all());
}

TEST(Fidelity, ToyModelCompensationWinsPerToken) {
  const MoEModel m = gen_synthetic_model(toy(14));
  const CompressedModel a = compress_model(m, int2_opts()).model;
  const FidelityReport rep = evaluate_fidelity(m, a, gen_tokens(15, 100, m.hidden), cfg(2, 1));
  EXPECT_EQ(rep.quantized_per_sample.size(), 200u);
  EXPECT_EQ(rep.reference_error, 0.0);
  EXPECT_LT(rep.compensated_error, rep.quantized_error);
  EXPECT_GE(rep.win_rate, 0.95);
}

TEST(Fidelity, LosslessQuantizationHasZeroError) {
  const MoEModel m = gen_synthetic_model(toy(16));
  CompressOptions o = int2_opts();
  o.quant.group_size = 1;  // every element its own group: exact storage
  const FidelityReport rep =
      evaluate_fidelity(m, compress_model(m, o).model, gen_tokens(17, 20, m.hidden), cfg(2, 1));
  EXPECT_LE(rep.quantized_error, 1e-14);
  EXPECT_LE(rep.compensated_error, 1e-12);
}

TEST(Fidelity, ErrorNonIncreasingInRank) {
  SyntheticModelSpec s = toy(18);
  s.hidden = 128;
  s.ffn = 256;
  s.num_layers = 1;
  s.num_experts = 4;
  const MoEModel m = gen_synthetic_model(s);
  const Matrix tokens = gen_tokens(19, 40, m.hidden);
  double prev = std::numeric_limits<double>::infinity();
  for (Index r : {16, 32, 128}) {
    const FidelityReport rep =
        evaluate_fidelity(m, compress_model_uniform(m, int2_opts(), r).model, tokens, cfg(2, 1));
    EXPECT_LE(rep.compensated_error, prev) << "rank " << r;
    prev = rep.compensated_error;
  }
}

TEST(Fidelity, EmptyTokensThrow) {
  const MoEModel m = gen_synthetic_model(toy(1));
  const ResolvedWeights w;
  EXPECT_THROW(evaluate_fidelity(m, w, Matrix(0, m.hidden), cfg(2, 1)), std::invalid_argument);
}

TEST(Trace, TokenMajorAndDeterministic) {
  const MoEModel m = gen_synthetic_model(toy(20));
  const Matrix tokens = gen_tokens(21, 5, m.hidden);
  const RoutingTrace a = trace_tokens(m, tokens, cfg(2, 1));
  ASSERT_EQ(a.size(), 10u);
  EXPECT_EQ(a[3].token, 1);
  EXPECT_EQ(a[3].layer, 1);
  EXPECT_EQ(a, trace_tokens(m, tokens, cfg(2, 1)));
  EXPECT_NO_THROW(validate_trace(a));
}

TEST(Trace, JsonlRoundTrip) {
  const MoEModel m = gen_synthetic_model(toy(22));
  const RoutingTrace a = trace_tokens(m, gen_tokens(23, 7, m.hidden), cfg(2, 1));
  std::stringstream ss;
  write_trace_jsonl(a, ss);
  const std::string first = ss.str().substr(0, ss.str().find('\n'));
  EXPECT_EQ(first.rfind("{\"token\":0,\"layer\":0,\"scores\":[", 0), 0u) << first;
  const RoutingTrace b = read_trace_jsonl(ss);
  ASSERT_EQ(b.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].selected, b[i].selected);
    EXPECT_EQ(a[i].compensated, b[i].compensated);
    EXPECT_EQ(a[i].scores, b[i].scores);
  }
}

TEST(Trace, ValidationRejectsBrokenRecords) {
  TraceRecord r{0, 0, {0.5, 0.3, 0.2}, {0, 1}, {0}};
  EXPECT_NO_THROW(validate_trace({r}));
  TraceRecord neg = r;
  neg.scores[2] = -0.1;
  EXPECT_THROW(validate_trace({neg}), FormatError);
  TraceRecord over = r;
  over.scores = {0.9, 0.9, 0.0};
  EXPECT_THROW(validate_trace({over}), FormatError);
  TraceRecord order = r;
  order.selected = {1, 0};
  order.compensated = {1};
  EXPECT_THROW(validate_trace({order}), FormatError);
  TraceRecord prefix = r;
  prefix.compensated = {1};
  EXPECT_THROW(validate_trace({prefix}), FormatError);
  std::stringstream bad("{\"token\":0}\n");
  EXPECT_THROW(read_trace_jsonl(bad), FormatError);
}

TEST(RoutingStats, UniformRouter) {
  const RoutingTrace t = trace_tokens(std::vector<Matrix>{Matrix::Zero(8, 4)}, gen_tokens(1, 50, 8), cfg(2, 1));
  const RoutingStats s = routing_stats(t);
  for (double v : s.aggregate) EXPECT_NEAR(v, 0.25, 1e-15);
  EXPECT_EQ(s.records, 50);
}

TEST(RoutingStats, SingleTokenIsSortedScores) {
  TraceRecord r{0, 0, {0.1, 0.6, 0.3}, {1, 2}, {1}};
  const RoutingStats s = routing_stats({r});
  EXPECT_EQ(s.aggregate, (std::vector<double>{0.6, 0.3, 0.1}));
  EXPECT_EQ(s.per_layer.at(0), s.aggregate);
  EXPECT_THROW(routing_stats({}), std::invalid_argument);
}

TEST(RoutingStats, MixtralLikeTopOneDominates) {
  const auto gates = gen_synthetic_gates(3, 64, 4, 8, router_skew_preset("mixtral-like"));
  ForwardConfig c = cfg(2, 1);
  const RoutingStats s = routing_stats(trace_tokens(gates, gen_tokens(4, 2500, 64), c));
  EXPECT_GT(s.aggregate[0], 2.0 * s.aggregate[1]);
}

TEST(ForwardMode, Strings) {
  EXPECT_EQ(forward_mode_from_string("compensated"), ForwardMode::compensated);
  EXPECT_EQ(to_string(ForwardMode::quantized), "quantized");
  EXPECT_THROW(forward_mode_from_string("fp8"), ConfigError);
}
