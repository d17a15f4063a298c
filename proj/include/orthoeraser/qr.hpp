#pragma once

#include <vector>

#include "orthoeraser/types.hpp"

namespace orthoeraser {

/// Rank-revealing factorization A * P = Q * R.
struct PivotedQr {
  Matrix q;  // m x rank, orthonormal columns
  Matrix r;  // rank x n, upper trapezoidal, columns in pivoted order
  /// Column j of `r` corresponds to input column permutation[j].
  std::vector<Eigen::Index> permutation;
  Eigen::Index rank = 0;

  /// Input matrix with its columns reordered by `permutation`.
  Matrix permuted(const Matrix& a) const;
};

/// Householder QR with column pivoting (largest remaining column norm first,
/// lowest index on ties). Elimination stops at the first pivot whose
/// magnitude falls below `relative_tolerance * |R(0,0)|`; the remaining
/// columns are treated as dependent.
PivotedQr pivoted_householder_qr(const Matrix& a, double relative_tolerance = 1e-10);

}  // namespace orthoeraser
