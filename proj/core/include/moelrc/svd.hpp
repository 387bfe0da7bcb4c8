#pragma once

#include "moelrc/types.hpp"

namespace moelrc {

/// Thin singular value decomposition E ~= U * diag(S) * V.
/// `u` is m x r with orthonormal columns, `v` is r x n with orthonormal rows,
/// `singular_values` is non-negative and non-increasing.
struct SvdFactors {
  Matrix u;
  Vector singular_values;
  Matrix v;

  Index rank() const { return singular_values.size(); }
  Matrix reconstruct() const;
};

/// Full thin SVD by one-sided (Hestenes) Jacobi rotations. Deterministic;
/// accurate to working precision for the small dense matrices used here.
SvdFactors jacobi_svd(const Matrix& e);

/// Leading `rank` singular triplets of `e`. rank == 0 yields empty factors.
/// Throws std::invalid_argument if rank > min(rows, cols) or `e` is not finite.
SvdFactors truncated_svd(const Matrix& e, Index rank);

}  // namespace moelrc
