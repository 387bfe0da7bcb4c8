#pragma once

// Low-rank compensation of quantization residuals.
//
// For a weight W with quantized form Q(W), the residual E = W - deq(Q(W)) is
// approximated by a rank-r product U V obtained from one truncated SVD with the
// singular values split evenly between the factors (U sqrt(S), sqrt(S) V^T).
// Both factors are themselves stored low-bit with the groupwise quantizer.

#include "moelrc/quantizer.hpp"
#include "moelrc/types.hpp"

#include <cstdint>

namespace moelrc {

struct CompensatorOptions {
  int factor_bits = 3;
  // 0 selects min(64, factor row length). 1 makes factor storage lossless,
  // which is how tests obtain "unquantized" factors.
  int factor_group_size = 0;
};

struct Compensator {
  Projection projection = Projection::w1;
  Index rank = 0;
  Index rows = 0;  // m of the compensated weight
  Index cols = 0;  // n of the compensated weight
  QuantizedMatrix u;  // rows x rank
  QuantizedMatrix v;  // rank x cols

  bool empty() const { return rank == 0; }
  void validate() const;

  /// deq(U) * deq(V), an m x n matrix (zeros when rank == 0).
  Matrix product() const;

  bool operator==(const Compensator&) const = default;
};

/// W - deq(qm). Throws std::invalid_argument on shape mismatch.
Matrix residual(const Matrix& w, const QuantizedMatrix& qm);

/// ||W - deq(qm)||_F / ||W||_F (0 for an all-zero W).
double relative_residual(const Matrix& w, const QuantizedMatrix& qm);

Compensator build_compensator(const Matrix& w, const QuantizedMatrix& qm, Index rank,
                              Projection projection = Projection::w1,
                              const CompensatorOptions& opts = {});

/// Same as build_compensator but starting from an already computed residual.
Compensator compensator_from_residual(const Matrix& e, Index rank, Projection projection,
                                      const CompensatorOptions& opts = {});

/// deq(qm) + deq(U) deq(V).
Matrix apply_compensation(const QuantizedMatrix& qm, const Compensator& c);

/// ceil((m + n) * r * bits / 8): the packed size of both factors.
std::uint64_t compensator_size_bytes(std::uint64_t m, std::uint64_t n, std::uint64_t rank,
                                     int factor_bits = 3);

}  // namespace moelrc
