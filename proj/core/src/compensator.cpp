#include "moelrc/compensator.hpp"

#include "moelrc/svd.hpp"

#include <algorithm>
#include <stdexcept>

namespace moelrc {

namespace {

QuantizedMatrix quantize_factor(const Matrix& f, const CompensatorOptions& opts) {
  QuantConfig cfg;
  cfg.bits = opts.factor_bits;
  cfg.hqq_iters = 0;
  cfg.group_size = opts.factor_group_size > 0
                       ? opts.factor_group_size
                       : static_cast<int>(std::clamp<Index>(f.cols(), 1, 64));
  return quantize(f, cfg);
}

}  // namespace

void Compensator::validate() const {
  if (rank < 0) throw std::invalid_argument("compensator: negative rank");
  if (rank == 0) {
    if (!u.empty() || !v.empty())
      throw std::invalid_argument("compensator: rank 0 with non-empty factors");
    return;
  }
  if (u.rows != rows || u.cols != rank || v.rows != rank || v.cols != cols)
    throw std::invalid_argument("compensator: factor shapes inconsistent with rank");
  u.validate();
  v.validate();
}

Matrix Compensator::product() const {
  if (rank == 0) return Matrix::Zero(rows, cols);
  return dequantize(u) * dequantize(v);
}

Matrix residual(const Matrix& w, const QuantizedMatrix& qm) {
  if (w.rows() != qm.rows || w.cols() != qm.cols)
    throw std::invalid_argument("residual: shape mismatch between weight and quantized matrix");
  return w - dequantize(qm);
}

double relative_residual(const Matrix& w, const QuantizedMatrix& qm) {
  const double denom = w.norm();
  if (denom == 0.0) return 0.0;
  return residual(w, qm).norm() / denom;
}

Compensator compensator_from_residual(const Matrix& e, Index rank, Projection projection,
                                      const CompensatorOptions& opts) {
  Compensator c;
  c.projection = projection;
  c.rows = e.rows();
  c.cols = e.cols();
  c.rank = rank;
  const SvdFactors svd = truncated_svd(e, rank);
  if (rank == 0) return c;

  const Vector root = svd.singular_values.cwiseSqrt();
  const Matrix u = svd.u * root.asDiagonal();
  const Matrix v = root.asDiagonal() * svd.v;
  c.u = quantize_factor(u, opts);
  c.v = quantize_factor(v, opts);
  return c;
}

Compensator build_compensator(const Matrix& w, const QuantizedMatrix& qm, Index rank,
                              Projection projection, const CompensatorOptions& opts) {
  return compensator_from_residual(residual(w, qm), rank, projection, opts);
}

Matrix apply_compensation(const QuantizedMatrix& qm, const Compensator& c) {
  Matrix out = dequantize(qm);
  if (c.empty()) return out;
  if (c.rows != qm.rows || c.cols != qm.cols)
    throw std::invalid_argument("apply_compensation: compensator shape does not match weight");
  out.noalias() += dequantize(c.u) * dequantize(c.v);
  return out;
}

std::uint64_t compensator_size_bytes(std::uint64_t m, std::uint64_t n, std::uint64_t rank,
                                     int factor_bits) {
  return ((m + n) * rank * static_cast<std::uint64_t>(factor_bits) + 7) / 8;
}

}  // namespace moelrc
