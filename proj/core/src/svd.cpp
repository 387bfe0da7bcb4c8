#include "moelrc/svd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace moelrc {

namespace {

using ColMatrix = Eigen::MatrixXd;

constexpr int kMaxSweeps = 80;

// Replaces exactly-zero columns of `u` (from rank-deficient inputs) with unit
// vectors orthogonal to the other columns.
void complete_basis(ColMatrix& u, const std::vector<bool>& is_zero) {
  const Index m = u.rows();
  Index probe = 0;
  for (Index j = 0; j < u.cols(); ++j) {
    if (!is_zero[static_cast<std::size_t>(j)]) continue;
    for (; probe < m; ++probe) {
      Eigen::VectorXd cand = Eigen::VectorXd::Unit(m, probe);
      for (int pass = 0; pass < 2; ++pass) {
        for (Index k = 0; k < u.cols(); ++k) {
          if (k == j || (is_zero[static_cast<std::size_t>(k)] && k > j)) continue;
          cand -= u.col(k).dot(cand) * u.col(k);
        }
      }
      const double nrm = cand.norm();
      if (nrm > 1e-8) {
        u.col(j) = cand / nrm;
        ++probe;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall matrix (rows >= cols).
SvdFactors jacobi_tall(const Matrix& a) {
  const Index m = a.rows();
  const Index n = a.cols();
  ColMatrix g = a;
  ColMatrix v = ColMatrix::Identity(n, n);
  const double eps = std::numeric_limits<double>::epsilon();

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    bool rotated = false;
    for (Index p = 0; p + 1 < n; ++p) {
      for (Index q = p + 1; q < n; ++q) {
        const double alpha = g.col(p).squaredNorm();
        const double beta = g.col(q).squaredNorm();
        const double gamma = g.col(p).dot(g.col(q));
        if (gamma == 0.0 || std::abs(gamma) <= eps * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::hypot(1.0, zeta));
        const double c = 1.0 / std::hypot(1.0, t);
        const double s = c * t;
        for (Index i = 0; i < m; ++i) {
          const double gp = g(i, p);
          const double gq = g(i, q);
          g(i, p) = c * gp - s * gq;
          g(i, q) = s * gp + c * gq;
        }
        for (Index i = 0; i < n; ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> sigma(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) sigma[static_cast<std::size_t>(j)] = g.col(j).norm();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index x, Index y) {
    return sigma[static_cast<std::size_t>(x)] > sigma[static_cast<std::size_t>(y)];
  });

  ColMatrix u(m, n);
  ColMatrix vs(n, n);
  Vector s(n);
  std::vector<bool> is_zero(static_cast<std::size_t>(n), false);
  for (Index k = 0; k < n; ++k) {
    const Index j = order[static_cast<std::size_t>(k)];
    const double sj = sigma[static_cast<std::size_t>(j)];
    s(k) = sj;
    vs.col(k) = v.col(j);
    if (sj > std::numeric_limits<double>::min()) {
      u.col(k) = g.col(j) / sj;
    } else {
      u.col(k).setZero();
      is_zero[static_cast<std::size_t>(k)] = true;
    }
  }
  if (std::any_of(is_zero.begin(), is_zero.end(), [](bool z) { return z; }))
    complete_basis(u, is_zero);

  SvdFactors out;
  out.u = u;
  out.singular_values = s;
  out.v = vs.transpose();
  return out;
}

}  // namespace

Matrix SvdFactors::reconstruct() const {
  if (rank() == 0) return Matrix::Zero(u.rows(), v.cols());
  return u * singular_values.asDiagonal() * v;
}

SvdFactors jacobi_svd(const Matrix& e) {
  if (!e.allFinite()) throw std::invalid_argument("svd: input contains non-finite values");
  if (e.rows() >= e.cols()) return jacobi_tall(e);
  // E^T = U' S V'  =>  E = V'^T S U'^T
  SvdFactors t = jacobi_tall(e.transpose());
  SvdFactors out;
  out.u = t.v.transpose();
  out.singular_values = t.singular_values;
  out.v = t.u.transpose();
  return out;
}

SvdFactors truncated_svd(const Matrix& e, Index rank) {
  if (rank < 0) throw std::invalid_argument("truncated_svd: negative rank");
  if (rank > std::min(e.rows(), e.cols()))
    throw std::invalid_argument("truncated_svd: rank " + std::to_string(rank) +
                                " exceeds min(rows, cols) = " +
                                std::to_string(std::min(e.rows(), e.cols())));
  if (!e.allFinite()) throw std::invalid_argument("truncated_svd: input contains non-finite values");
  SvdFactors out;
  if (rank == 0) {
    out.u = Matrix(e.rows(), 0);
    out.singular_values = Vector(0);
    out.v = Matrix(0, e.cols());
    return out;
  }
  SvdFactors full = jacobi_svd(e);
  out.u = full.u.leftCols(rank);
  out.singular_values = full.singular_values.head(rank);
  out.v = full.v.topRows(rank);
  return out;
}

}  // namespace moelrc
