#include "orthoeraser/qr.hpp"

#include <cmath>
#include <numeric>

#include "orthoeraser/error.hpp"

namespace orthoeraser {

Matrix PivotedQr::permuted(const Matrix& a) const {
  Matrix out(a.rows(), static_cast<Eigen::Index>(permutation.size()));
  for (std::size_t j = 0; j < permutation.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = a.col(permutation[j]);
  return out;
}

PivotedQr pivoted_householder_qr(const Matrix& a, double relative_tolerance) {
  require(relative_tolerance >= 0.0, ErrorCode::kInvalidArgument, "QR tolerance must be non-negative");
  const Eigen::Index m = a.rows();
  const Eigen::Index n = a.cols();
  const Eigen::Index steps = std::min(m, n);

  Matrix work = a;
  PivotedQr qr;
  qr.permutation.resize(static_cast<std::size_t>(n));
  std::iota(qr.permutation.begin(), qr.permutation.end(), Eigen::Index{0});

  // Householder vectors v_k (stored from row k down) and their scalings.
  std::vector<Vector> reflectors;
  std::vector<double> betas;
  double leading = 0.0;

  for (Eigen::Index k = 0; k < steps; ++k) {
    // Trailing norms are recomputed rather than downdated; n is small here
    // and recomputation avoids the cancellation that downdating suffers.
    Eigen::Index pivot = k;
    double best = -1.0;
    for (Eigen::Index j = k; j < n; ++j) {
      const double norm2 = work.col(j).tail(m - k).squaredNorm();
      if (norm2 > best) {
        best = norm2;
        pivot = j;
      }
    }
    if (pivot != k) {
      work.col(k).swap(work.col(pivot));
      std::swap(qr.permutation[static_cast<std::size_t>(k)], qr.permutation[static_cast<std::size_t>(pivot)]);
    }

    const double column_norm = std::sqrt(best);
    if (k == 0) leading = column_norm;
    if (column_norm == 0.0 || column_norm < relative_tolerance * leading) break;

    auto x = work.col(k).tail(m - k);
    const double alpha = x[0] >= 0.0 ? -column_norm : column_norm;
    Vector v = x;
    v[0] -= alpha;
    const double vnorm2 = v.squaredNorm();
    const double beta = vnorm2 > 0.0 ? 2.0 / vnorm2 : 0.0;

    // Apply H = I - beta v v^T to the trailing block.
    auto block = work.bottomRightCorner(m - k, n - k);
    const Eigen::RowVectorXd w = beta * (v.transpose() * block);
    block.noalias() -= v * w;
    work(k, k) = alpha;
    work.col(k).tail(m - k - 1).setZero();

    reflectors.push_back(std::move(v));
    betas.push_back(beta);
    qr.rank = k + 1;
  }

  const Eigen::Index r = qr.rank;
  qr.r = work.topRows(r);  // sub-diagonal entries were zeroed during elimination
  // Q = H_0 H_1 ... H_{r-1} applied to the first r columns of the identity.
  qr.q = Matrix::Identity(m, r);
  for (Eigen::Index k = r - 1; k >= 0; --k) {
    const Vector& v = reflectors[static_cast<std::size_t>(k)];
    auto block = qr.q.bottomRows(m - k);
    const Eigen::RowVectorXd w = betas[static_cast<std::size_t>(k)] * (v.transpose() * block);
    block.noalias() -= v * w;
  }
  return qr;
}

}  // namespace orthoeraser
