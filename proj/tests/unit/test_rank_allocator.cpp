#include "moelrc/rank_allocator.hpp"
#include "moelrc/synthetic.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <set>

using namespace moelrc;

namespace {

KurtosisProfile profile_of(const std::vector<double>& ks) {
  KurtosisProfile p;
  for (std::size_t i = 0; i < ks.size(); ++i)
    p.entries.push_back({{0, static_cast<int>(i), Projection::w1}, ks[i], kNoRankCap});
  return p;
}

std::vector<Index> ranks_in_entry_order(const KurtosisProfile& p, const RankAllocation& a) {
  std::vector<Index> out;
  for (const auto& e : p.entries) out.push_back(a.rank_of(e.key));
  return out;
}

// Independent statement of the greedy: entries ranked by (kurtosis desc, key
// asc) via a comparison-free selection loop.
std::map<MatrixKey, Index> oracle_greedy(const KurtosisProfile& p, Index avg,
                                         const std::vector<Index>& buckets, bool per_layer) {
  std::map<MatrixKey, Index> out;
  std::map<int, Index> budget;
  for (const auto& e : p.entries) budget[per_layer ? e.key.layer : 0] += avg;
  std::vector<bool> done(p.entries.size(), false);
  for (std::size_t step = 0; step < p.entries.size(); ++step) {
    std::size_t pick = p.entries.size();
    for (std::size_t i = 0; i < p.entries.size(); ++i) {
      if (done[i]) continue;
      if (pick == p.entries.size()) {
        pick = i;
        continue;
      }
      const auto& a = p.entries[i];
      const auto& b = p.entries[pick];
      if (a.kurtosis > b.kurtosis || (a.kurtosis == b.kurtosis && a.key < b.key)) pick = i;
    }
    done[pick] = true;
    const auto& e = p.entries[pick];
    Index& left = budget[per_layer ? e.key.layer : 0];
    Index best = 0;
    for (Index b : buckets)
      if (b <= left && b <= e.max_rank) best = std::max(best, b);
    left -= best;
    out[e.key] = best;
  }
  return out;
}

KurtosisProfile random_profile(std::mt19937_64& rng, bool caps) {
  KurtosisProfile p;
  const int layers = 1 + static_cast<int>(rng() % 4);
  const int experts = 1 + static_cast<int>(rng() % 8);
  for (int l = 0; l < layers; ++l)
    for (int e = 0; e < experts; ++e)
      for (Projection proj : kProjections) {
        // coarse values so ties are frequent
        const double k = static_cast<double>(rng() % 12) / 2.0 + 1.0;
        const Index cap = caps ? static_cast<Index>(rng() % 600) : kNoRankCap;
        p.entries.push_back({{l, e, proj}, k, cap});
      }
  std::shuffle(p.entries.begin(), p.entries.end(), rng);
  return p;
}

}  // namespace

TEST(Kurtosis, TwoPointSymmetric) {
  const std::vector<double> v{-1, 1, -1, 1};
  const auto k = kurtosis(v);
  EXPECT_DOUBLE_EQ(k.value, 1.0);
  EXPECT_FALSE(k.degenerate);
}

TEST(Kurtosis, HandEvaluatedSkewed) {
  const std::vector<double> v{0, 0, 0, 1};
  EXPECT_NEAR(kurtosis(v).value, 7.0 / 3.0, 1e-14);
}

TEST(Kurtosis, GaussianMonteCarlo) {
  const Matrix m = test::gaussian(5, 1000, 1000);
  EXPECT_NEAR(kurtosis(m).value, 3.0, 0.05);
}

TEST(Kurtosis, ConstantIsDegenerate) {
  const auto k = kurtosis(Matrix::Constant(3, 3, 4.2));
  EXPECT_EQ(k.value, 0.0);
  EXPECT_TRUE(k.degenerate);
}

TEST(Kurtosis, EmptyThrows) {
  EXPECT_THROW(kurtosis(std::span<const double>{}), std::invalid_argument);
  EXPECT_THROW(kurtosis(Matrix(0, 3)), std::invalid_argument);
}

// Property: kurtosis >= 1 for any non-constant sample and is affine invariant.
TEST(KurtosisProperty, LowerBoundAndAffineInvariance) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const Index n = 2 + static_cast<Index>(rng() % 200);
    Matrix m = test::uniform(rng(), 1, n, -3, 3);
    if (trial % 3 == 0) m = m.array().cube();
    const auto k = kurtosis(m);
    if (k.degenerate) continue;
    ASSERT_GE(k.value, 1.0 - 1e-12);
    const Matrix t = (m.array() * -2.5 + 7.0).matrix();
    ASSERT_NEAR(kurtosis(t).value, k.value, 1e-9 * k.value);
  }
}

TEST(AllocateRanks, ZeroBudget) {
  const auto p = profile_of({10, 5, 2, 1});
  const auto a = allocate_ranks(p, 0);
  EXPECT_EQ(ranks_in_entry_order(p, a), (std::vector<Index>{0, 0, 0, 0}));
}

TEST(AllocateRanks, HandExampleConcentrates) {
  const auto p = profile_of({10, 5, 2, 1});
  const auto a = allocate_ranks(p, 32);
  EXPECT_EQ(ranks_in_entry_order(p, a), (std::vector<Index>{128, 0, 0, 0}));
  EXPECT_EQ(a.total_rank(), 128);
}

TEST(AllocateRanks, HandExampleLargestFeasible) {
  const auto p = profile_of({10, 5, 2, 1});
  const auto a = allocate_ranks(p, 300);
  EXPECT_EQ(ranks_in_entry_order(p, a), (std::vector<Index>{1024, 128, 32, 16}));
  EXPECT_EQ(a.total_rank(), 1200);
}

TEST(AllocateRanks, EntryOrderDoesNotMatter) {
  const auto p = profile_of({1, 2, 10, 5});
  const auto a = allocate_ranks(p, 32);
  EXPECT_EQ(ranks_in_entry_order(p, a), (std::vector<Index>{0, 0, 128, 0}));
}

TEST(AllocateRanks, TiesBreakByKey) {
  KurtosisProfile p;
  p.entries.push_back({{1, 0, Projection::w1}, 4.0, kNoRankCap});
  p.entries.push_back({{0, 3, Projection::w2}, 4.0, kNoRankCap});
  p.entries.push_back({{0, 3, Projection::w1}, 4.0, kNoRankCap});
  const auto a = allocate_ranks(p, 48);  // pool 144: 128 then 16 then 0
  EXPECT_EQ(a.rank_of({0, 3, Projection::w1}), 128);
  EXPECT_EQ(a.rank_of({0, 3, Projection::w2}), 16);
  EXPECT_EQ(a.rank_of({1, 0, Projection::w1}), 0);
}

TEST(AllocateRanks, RespectsMatrixRankCap) {
  KurtosisProfile p = profile_of({10, 5});
  p.entries[0].max_rank = 64;
  const auto a = allocate_ranks(p, 100);
  EXPECT_EQ(a.rank_of(p.entries[0].key), 32);
  EXPECT_EQ(a.rank_of(p.entries[1].key), 128);
}

TEST(AllocateRanks, PerLayerScope) {
  KurtosisProfile p;
  p.entries.push_back({{0, 0, Projection::w1}, 9.0, kNoRankCap});
  p.entries.push_back({{0, 1, Projection::w1}, 8.0, kNoRankCap});
  p.entries.push_back({{1, 0, Projection::w1}, 1.0, kNoRankCap});
  p.entries.push_back({{1, 1, Projection::w1}, 0.5, kNoRankCap});
  const auto global = allocate_ranks(p, 64, kDefaultBuckets, AllocationScope::global);
  EXPECT_EQ(global.rank_of({0, 0, Projection::w1}), 256);
  EXPECT_EQ(global.rank_of({1, 0, Projection::w1}), 0);
  const auto local = allocate_ranks(p, 64, kDefaultBuckets, AllocationScope::per_layer);
  EXPECT_EQ(local.rank_of({0, 0, Projection::w1}), 128);
  EXPECT_EQ(local.rank_of({0, 1, Projection::w1}), 0);
  EXPECT_EQ(local.rank_of({1, 0, Projection::w1}), 128);
}

TEST(AllocateRanks, RejectsBadInputs) {
  const auto p = profile_of({1, 2});
  EXPECT_THROW(allocate_ranks(p, -1), std::invalid_argument);
  EXPECT_THROW(allocate_ranks(p, 16, {16, 32}), std::invalid_argument);
  EXPECT_THROW(allocate_ranks(p, 16, {0, -16}), std::invalid_argument);
  KurtosisProfile dup = profile_of({1, 2});
  dup.entries[1].key = dup.entries[0].key;
  EXPECT_THROW(allocate_ranks(dup, 16), std::invalid_argument);
}

TEST(AllocationScope, StringRoundTrip) {
  EXPECT_EQ(allocation_scope_from_string("per_layer"), AllocationScope::per_layer);
  EXPECT_EQ(to_string(AllocationScope::global), "global");
  EXPECT_THROW(allocation_scope_from_string("local"), ConfigError);
}

// Property: budget feasibility, bucket membership, agreement with the
// selection-loop oracle and determinism under shuffled entry order.
TEST(AllocateRanksProperty, InvariantsOverRandomProfiles) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const bool caps = trial % 2 == 1;
    const bool per_layer = trial % 4 >= 2;
    KurtosisProfile p = random_profile(rng, caps);
    const Index avg = static_cast<Index>(rng() % 400);
    std::vector<Index> buckets = kDefaultBuckets;
    if (trial % 5 == 0) buckets = {0, 8, 24, 100};
    const auto scope = per_layer ? AllocationScope::per_layer : AllocationScope::global;
    const auto a = allocate_ranks(p, avg, buckets, scope);

    const Index n = static_cast<Index>(p.entries.size());
    ASSERT_LE(a.total_rank(), n * avg) << "trial " << trial;
    ASSERT_EQ(static_cast<Index>(a.ranks.size()), n);
    const std::set<Index> allowed(buckets.begin(), buckets.end());
    for (const auto& [key, r] : a.ranks) ASSERT_TRUE(allowed.count(r)) << r;
    ASSERT_EQ(a.ranks, oracle_greedy(p, avg, buckets, per_layer)) << "trial " << trial;

    if (per_layer) {
      std::map<int, std::pair<Index, Index>> layer;  // total, count
      for (const auto& [key, r] : a.ranks) {
        layer[key.layer].first += r;
        layer[key.layer].second += 1;
      }
      for (const auto& [l, tc] : layer) ASSERT_LE(tc.first, tc.second * avg);
    }

    KurtosisProfile shuffled = p;
    std::shuffle(shuffled.entries.begin(), shuffled.entries.end(), rng);
    ASSERT_EQ(allocate_ranks(shuffled, avg, buckets, scope).ranks, a.ranks);

    // Without caps in one pool, ranks are non-increasing along the traversal.
    if (!caps && !per_layer) {
      Index prev = std::numeric_limits<Index>::max();
      for (std::size_t idx : allocation_order(p)) {
        const Index r = a.rank_of(p.entries[idx].key);
        ASSERT_LE(r, prev);
        prev = r;
      }
    }
  }
}

TEST(AllocationJson, RoundTrip) {
  std::mt19937_64 rng(4);
  const KurtosisProfile p = random_profile(rng, true);
  const auto a = allocate_ranks(p, 48, kDefaultBuckets, AllocationScope::per_layer);
  const auto b = allocation_from_json(allocation_to_json(a, p));
  EXPECT_EQ(b.ranks, a.ranks);
  EXPECT_EQ(b.avg_budget, 48);
  EXPECT_EQ(b.scope, AllocationScope::per_layer);
  EXPECT_EQ(b.buckets, a.buckets);
  EXPECT_THROW(allocation_from_json("{\"avg_budget\": 1}"), FormatError);
}

TEST(Spearman, PerfectAndReversed) {
  const std::vector<double> x{1, 2, 3, 4, 5};
  const std::vector<double> y{10, 20, 25, 100, 1000};
  const std::vector<double> z{5, 4, 3, 2, 1};
  EXPECT_NEAR(spearman(x, y).rho, 1.0, 1e-15);
  EXPECT_NEAR(spearman(x, z).rho, -1.0, 1e-15);
}

TEST(Spearman, TiesUseAverageRanks) {
  const std::vector<double> x{1, 2, 2, 3};
  const std::vector<double> y{1, 3, 2, 4};
  // ranks x: 1, 2.5, 2.5, 4; y: 1, 3, 2, 4; Pearson by hand
  const double rx[] = {1, 2.5, 2.5, 4};
  const double ry[] = {1, 3, 2, 4};
  double sxy = 0, sxx = 0, syy = 0;
  for (int i = 0; i < 4; ++i) {
    sxy += (rx[i] - 2.5) * (ry[i] - 2.5);
    sxx += (rx[i] - 2.5) * (rx[i] - 2.5);
    syy += (ry[i] - 2.5) * (ry[i] - 2.5);
  }
  EXPECT_NEAR(spearman(x, y).rho, sxy / std::sqrt(sxx * syy), 1e-14);
}

TEST(Spearman, Degenerate) {
  const std::vector<double> one{1};
  EXPECT_TRUE(spearman(one, one).degenerate);
  const std::vector<double> c{2, 2, 2};
  const std::vector<double> y{1, 2, 3};
  EXPECT_TRUE(spearman(c, y).degenerate);
  EXPECT_THROW(spearman(c, one), std::invalid_argument);
}

TEST(KurtosisErrorReport, StudentTSuiteCorrelates) {
  SyntheticModelSpec spec;
  spec.seed = 1;
  spec.num_layers = 2;
  spec.num_experts = 10;
  spec.tail_dofs = {3, 4, 6, 10, kGaussianDof};
  const auto rep = kurtosis_error_report(gen_synthetic_model(spec), QuantConfig{});
  EXPECT_EQ(rep.stats.size(), 60u);
  EXPECT_FALSE(rep.correlation.degenerate);
  EXPECT_GT(rep.correlation.rho, 0.5);
}

TEST(KurtosisErrorReport, IdenticalExpertsAreDegenerate) {
  SyntheticModelSpec spec;
  spec.hidden = 16;
  spec.ffn = 32;
  spec.num_layers = 1;
  spec.num_experts = 3;
  MoEModel m = gen_synthetic_model(spec);
  const Matrix a = m.layers[0].experts[0].w1;
  for (auto& e : m.layers[0].experts) {
    e.w1 = a;
    e.w3 = a;
    e.w2 = a.transpose();
  }
  EXPECT_TRUE(kurtosis_error_report(m, QuantConfig{}).correlation.degenerate);
}

TEST(KurtosisErrorReport, SingleExpertIsDegenerate) {
  SyntheticModelSpec spec;
  spec.hidden = 16;
  spec.ffn = 32;
  spec.num_layers = 1;
  spec.num_experts = 1;
  EXPECT_TRUE(kurtosis_error_report(gen_synthetic_model(spec), QuantConfig{}).correlation.degenerate);
}

TEST(KurtosisProfile, CoversEveryProjectionWithRankCap) {
  SyntheticModelSpec spec;
  spec.hidden = 16;
  spec.ffn = 24;
  spec.num_layers = 2;
  spec.num_experts = 3;
  spec.num_shared = 1;
  const auto p = kurtosis_profile(gen_synthetic_model(spec));
  EXPECT_EQ(p.entries.size(), 2u * 4u * 3u);
  EXPECT_EQ(p.elements_per_matrix, 16 * 24);
  std::set<MatrixKey> keys;
  for (const auto& e : p.entries) {
    keys.insert(e.key);
    EXPECT_EQ(e.max_rank, 16);
  }
  EXPECT_EQ(keys.size(), p.entries.size());
  EXPECT_EQ(kurtosis_profile(gen_synthetic_model(spec), false).entries[0].max_rank, kNoRankCap);
}
