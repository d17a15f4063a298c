#pragma once

#include <memory>
#include <vector>

#include "orthoeraser/detector.hpp"
#include "orthoeraser/qr.hpp"
#include "orthoeraser/sae.hpp"

namespace orthoeraser {

/// Orthonormal basis of the span of the coupled decoder columns W_C.
struct ProtectedBasis {
  Matrix protected_columns;  // W_C, d x |C|
  Matrix q;                  // d x rank
  Matrix r;                  // rank x |C|, columns in pivoted order
  std::vector<Eigen::Index> permutation;
  Eigen::Index rank = 0;

  Eigen::Index dim() const { return protected_columns.rows(); }
};

/// Columns whose pivot falls below 1e-10 of the leading pivot are dropped.
inline constexpr double kRankTolerance = 1e-10;

ProtectedBasis build_basis(const Matrix& protected_columns, double relative_tolerance = kRankTolerance);
ProtectedBasis build_basis(const SaeModel& model, const CoupledSet& coupled,
                           double relative_tolerance = kRankTolerance);

/// Decoder columns of the given features, in the given order.
Matrix gather_columns(const SaeModel& model, const std::vector<Eigen::Index>& features);

/// d_raw = sum over sensitive features of z_i w_i^dec.
Vector raw_direction(const SaeModel& model, const SparseCode& z, const SensitiveSet& sensitive);

/// d* = d_raw - Q (Q^T d_raw), evaluated as two matrix-vector products.
Vector orthogonalize(const Vector& raw, const ProtectedBasis& basis);

/// Reusable buffers for the per-activation path; once reserved, apply_into
/// performs no heap allocation.
struct ApplyWorkspace {
  EncodeWorkspace encode;
  Vector code;
  Vector raw;
  Vector coefficients;  // lambda Q^T d_raw, length rank
};

/// Fixed per plan: the SAE, the sensitive features, and the protected basis.
class ProjectionPlan {
 public:
  ProjectionPlan(std::shared_ptr<const SaeModel> model, SensitiveSet sensitive, ProtectedBasis basis,
                 double lambda = 3.0);

  /// Builds W_C from the plan's coupled set and factors it.
  static ProjectionPlan from_detection(std::shared_ptr<const SaeModel> model, const DetectionPlan& detection,
                                       double lambda = 3.0);

  const SaeModel& model() const { return *model_; }
  const SensitiveSet& sensitive() const { return sensitive_; }
  const ProtectedBasis& basis() const { return basis_; }
  double lambda() const { return lambda_; }
  ProjectionPlan with_lambda(double lambda) const;

  void reserve(ApplyWorkspace& workspace) const;

  /// h~ = h - lambda d*(h) with d* computed from encode(h).
  Vector apply(const Vector& h) const;
  void apply_into(const Vector& h, ApplyWorkspace& workspace, Vector& out) const;

  /// Intervention stage only, for a code that was already computed: the
  /// O(d |N_sens|) raw direction plus the O(d rank) projection.
  void intervene_into(const Vector& h, const Vector& code, ApplyWorkspace& workspace, Vector& out) const;

  /// Applies column-wise to a d x n batch.
  Matrix apply_batch(const Matrix& batch) const;

 private:
  std::shared_ptr<const SaeModel> model_;
  SensitiveSet sensitive_;
  ProtectedBasis basis_;
  double lambda_;
};

struct GramOptions {
  /// Replace (W_C^T W_C)^-1 with the Moore-Penrose pseudo-inverse.
  bool pseudo_inverse = false;
  /// Eigenvalues of the Gram matrix below this share of the largest are
  /// treated as zero.
  double relative_tolerance = 1e-12;
};

/// P_full = W_C (W_C^T W_C)^-1 W_C^T as an explicit d x d matrix; test and
/// report use only.
Matrix gram_projection(const Matrix& protected_columns, const GramOptions& options = {});

struct LagrangeSolution {
  Vector direction;    // d = d_raw - W_C nu
  Vector multipliers;  // nu = (W_C^T W_C)^-1 W_C^T d_raw
  double stationarity_residual = 0.0;  // ||(d - d_raw) + W_C nu||
  double feasibility_residual = 0.0;   // ||W_C^T d||
};

/// Solves min 1/2 ||d - d_raw||^2 subject to W_C^T d = 0 via its KKT system.
LagrangeSolution constrained_lsq_oracle(const Vector& raw, const Matrix& protected_columns,
                                        const GramOptions& options = {});

struct EquivalenceReport {
  double projector_gap = 0.0;  // max |QQ^T - P_full|
  double stationarity_residual = 0.0;
  double feasibility_residual = 0.0;
  Vector multipliers;

  bool finite() const;
};

EquivalenceReport equivalence_report(const Vector& raw, const ProtectedBasis& basis,
                                     const GramOptions& options = {});

}  // namespace orthoeraser
