#include "moelrc/compensator.hpp"
#include "moelrc/svd.hpp"

#include "test_support.hpp"

#include <Eigen/SVD>
#include <gtest/gtest.h>

using namespace moelrc;
using moelrc::test::gaussian;
using moelrc::test::oracle_minmax;

namespace {

QuantConfig int2() {
  QuantConfig c;
  c.bits = 2;
  return c;
}

CompensatorOptions lossless() {
  CompensatorOptions o;
  o.factor_group_size = 1;
  return o;
}

double tail(const Matrix& e, Index r) {
  Eigen::MatrixXd d = e;
  const Eigen::VectorXd s = Eigen::BDCSVD<Eigen::MatrixXd>(d).singularValues();
  return std::sqrt(s.tail(s.size() - r).squaredNorm());
}

}  // namespace

TEST(Residual, OnGridIsZero) {
  Matrix w(2, 4);
  w << 0, 1, 2, 3, -1, 0, 1, 2;
  QuantConfig c = int2();
  c.group_size = 4;
  EXPECT_TRUE((residual(w, quantize(w, c)).array() == 0.0).all());
}

TEST(Residual, DefiningIdentity) {
  const Matrix w = gaussian(1, 16, 96);
  const QuantizedMatrix qm = quantize(w, int2());
  const Matrix back = residual(w, qm) + dequantize(qm);
  EXPECT_LE((back - w).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Residual, FrobeniusMatchesDuplicatePath) {
  const Matrix w = gaussian(2, 32, 32);
  QuantConfig c = int2();
  c.hqq_iters = 0;
  const double got = residual(w, quantize(w, c)).norm();
  const double want = (w - oracle_minmax(w, 2, 64).dequant).norm();
  EXPECT_NEAR(got, want, 1e-12 * want);
  EXPECT_NEAR(relative_residual(w, quantize(w, c)), want / w.norm(), 1e-12);
}

TEST(Residual, ShapeMismatchThrows) {
  const QuantizedMatrix qm = quantize(gaussian(1, 4, 8), int2());
  EXPECT_THROW(residual(gaussian(1, 8, 4), qm), std::invalid_argument);
}

TEST(BuildCompensator, RankZeroIsPlainDequantize) {
  const Matrix w = gaussian(3, 20, 40);
  const QuantizedMatrix qm = quantize(w, int2());
  const Compensator c = build_compensator(w, qm, 0, Projection::w2);
  EXPECT_TRUE(c.empty());
  EXPECT_TRUE(c.u.empty());
  EXPECT_TRUE(c.v.empty());
  EXPECT_EQ(c.projection, Projection::w2);
  EXPECT_TRUE((apply_compensation(qm, c).array() == dequantize(qm).array()).all());
}

TEST(BuildCompensator, FactorsStoredAtThreeBits) {
  const Matrix w = gaussian(4, 30, 50);
  const QuantizedMatrix qm = quantize(w, int2());
  const Compensator c = build_compensator(w, qm, 8);
  EXPECT_EQ(c.u.bits, 3);
  EXPECT_EQ(c.v.bits, 3);
  EXPECT_EQ(c.u.rows, 30);
  EXPECT_EQ(c.u.cols, 8);
  EXPECT_EQ(c.v.rows, 8);
  EXPECT_EQ(c.v.cols, 50);
  EXPECT_NO_THROW(c.validate());
}

TEST(BuildCompensator, RejectsRankAboveMatrixRank) {
  const Matrix w = gaussian(5, 6, 9);
  const QuantizedMatrix qm = quantize(w, int2());
  EXPECT_THROW(build_compensator(w, qm, 7), std::invalid_argument);
}

TEST(BuildCompensator, FullRankLosslessRecoversWeight) {
  for (auto [m, n] : {std::pair<Index, Index>{24, 24}, {16, 40}, {40, 16}}) {
    const Matrix w = gaussian(6 + m, m, n);
    const QuantizedMatrix qm = quantize(w, int2());
    const Compensator c = build_compensator(w, qm, std::min(m, n), Projection::w1, lossless());
    EXPECT_LE(moelrc::test::rel_diff(apply_compensation(qm, c), w), 1e-6) << m << "x" << n;
  }
}

TEST(BuildCompensator, ReparameterizationEquivalence) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Index m = 4 + static_cast<Index>(rng() % 40);
    const Index n = 4 + static_cast<Index>(rng() % 40);
    const Index r = 1 + static_cast<Index>(rng() % std::min(m, n));
    const Matrix e = gaussian(rng(), m, n);
    const SvdFactors f = truncated_svd(e, r);
    const Matrix usv = f.u * f.singular_values.asDiagonal() * f.v;
    const Compensator c = compensator_from_residual(e, r, Projection::w3, lossless());
    ASSERT_LE(moelrc::test::rel_diff(c.product(), usv), 1e-10) << "trial " << trial;
  }
}

TEST(BuildCompensator, GaussianRankSweepTracksTailEnergy) {
  const Matrix w = gaussian(9, 64, 64);
  const QuantizedMatrix qm = quantize(w, int2());
  const Matrix e = residual(w, qm);
  const double plain = e.norm();
  double prev = plain;
  for (Index r : {4, 8, 16}) {
    const Compensator c = build_compensator(w, qm, r);
    const double got = (w - apply_compensation(qm, c)).norm();
    const double want = tail(e, r);
    EXPECT_LT(got, prev) << "rank " << r;
    EXPECT_LT(got, plain) << "rank " << r;
    EXPECT_NEAR(got, want, 0.05 * want) << "rank " << r;
    prev = got;
  }
}

// Property: with lossless factors the compensated residual equals the
// singular-value tail and never increases with rank.
TEST(CompensatorProperty, EckartYoungMonotone) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 25; ++trial) {
    const Index m = 8 + static_cast<Index>(rng() % 40);
    const Index n = 8 + static_cast<Index>(rng() % 40);
    const Matrix w = gaussian(rng(), m, n);
    const QuantizedMatrix qm = quantize(w, int2());
    const Matrix e = residual(w, qm);
    double prev = e.norm();
    for (Index r = 0; r <= std::min(m, n); r += 1 + static_cast<Index>(rng() % 6)) {
      const Compensator c = build_compensator(w, qm, r, Projection::w1, lossless());
      const double got = (w - apply_compensation(qm, c)).norm();
      const double want = tail(e, r);
      ASSERT_NEAR(got, want, 1e-6 * want + 1e-12 * e.norm()) << "trial " << trial << " r " << r;
      ASSERT_LE(got, prev * (1 + 1e-12));
      prev = got;
    }
  }
}

// Regression guard: INT3 factor storage costs at most 10% over exact factors
// on Gaussian residuals, 64x64 suite plus random shapes, while r <= min(m, n) / 4.
TEST(CompensatorProperty, FactorQuantizationPenalty) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 24; ++trial) {
    const Index m = trial < 8 ? 64 : 32 + static_cast<Index>(rng() % 97);
    const Index n = trial < 8 ? 64 : 32 + static_cast<Index>(rng() % 97);
    const Matrix w = gaussian(rng(), m, n);
    const QuantizedMatrix qm = quantize(w, int2());
    for (Index r : {4, 8, 16, 32}) {
      if (4 * r > std::min(m, n)) continue;
      const double exact =
          (w - apply_compensation(qm, build_compensator(w, qm, r, Projection::w1, lossless()))).norm();
      const double int3 = (w - apply_compensation(qm, build_compensator(w, qm, r))).norm();
      ASSERT_LE(int3, 1.10 * exact) << "trial " << trial << " r " << r;
    }
  }
}

TEST(CompensatorSize, ReferenceFigures) {
  auto expert = [](std::uint64_t r) {
    return 3 * compensator_size_bytes(4096, 14336, r, 3);
  };
  const double int2_expert = 44'040'192.0;
  EXPECT_EQ(expert(16), 331'776u);
  EXPECT_EQ(expert(128), 2'654'208u);
  EXPECT_NEAR(100.0 * expert(16) / int2_expert, 0.75, 0.02);
  EXPECT_NEAR(100.0 * expert(128) / int2_expert, 6.03, 0.02);
  EXPECT_NEAR(expert(16) / 1048576.0, 0.316, 0.0005);
  EXPECT_NEAR(expert(128) / 1048576.0, 2.53, 0.005);
  EXPECT_EQ(compensator_size_bytes(4096, 14336, 0), 0u);
  EXPECT_EQ(compensator_size_bytes(1, 1, 1, 3), 1u);
}

TEST(Compensator, ValidateCatchesInconsistentShapes) {
  const Matrix w = gaussian(11, 10, 12);
  const QuantizedMatrix qm = quantize(w, int2());
  Compensator c = build_compensator(w, qm, 4);
  c.rank = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  Compensator z = build_compensator(w, qm, 0);
  z.u = c.u;
  EXPECT_THROW(z.validate(), std::invalid_argument);
}
