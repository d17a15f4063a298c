#include "orthoeraser/projector.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "orthoeraser/error.hpp"

namespace orthoeraser {

ProtectedBasis build_basis(const Matrix& protected_columns, double relative_tolerance) {
  require(protected_columns.cols() >= 1, ErrorCode::kEmptyInput, "protected basis needs at least one column");
  require(protected_columns.allFinite(), ErrorCode::kInvalidArgument, "protected columns are not finite");
  PivotedQr qr = pivoted_householder_qr(protected_columns, relative_tolerance);
  ProtectedBasis basis;
  basis.protected_columns = protected_columns;
  basis.q = std::move(qr.q);
  basis.r = std::move(qr.r);
  basis.permutation = std::move(qr.permutation);
  basis.rank = qr.rank;
  return basis;
}

Matrix gather_columns(const SaeModel& model, const std::vector<Eigen::Index>& features) {
  Matrix out(model.input_dim(), static_cast<Eigen::Index>(features.size()));
  for (std::size_t j = 0; j < features.size(); ++j) {
    require(features[j] >= 0 && features[j] < model.feature_count(), ErrorCode::kOutOfRange,
            "feature index outside the SAE");
    out.col(static_cast<Eigen::Index>(j)) = model.decoder_weight.col(features[j]);
  }
  return out;
}

ProtectedBasis build_basis(const SaeModel& model, const CoupledSet& coupled, double relative_tolerance) {
  require(coupled.size() >= 1, ErrorCode::kEmptyInput, "coupled set is empty");
  return build_basis(gather_columns(model, coupled.indices), relative_tolerance);
}

Vector raw_direction(const SaeModel& model, const SparseCode& z, const SensitiveSet& sensitive) {
  require(z.values.size() == model.feature_count(), ErrorCode::kDimensionMismatch,
          "code length differs from the SAE feature count");
  Vector raw = Vector::Zero(model.input_dim());
  for (Eigen::Index i : sensitive.indices) {
    require(i >= 0 && i < model.feature_count(), ErrorCode::kOutOfRange, "sensitive index outside the SAE");
    if (z.values[i] != 0.0) raw.noalias() += z.values[i] * model.decoder_weight.col(i);
  }
  return raw;
}

Vector orthogonalize(const Vector& raw, const ProtectedBasis& basis) {
  require(raw.size() == basis.dim(), ErrorCode::kDimensionMismatch,
          "direction length differs from the protected basis dimension");
  const Vector coefficients = basis.q.transpose() * raw;
  Vector out = raw;
  out.noalias() -= basis.q * coefficients;
  return out;
}

ProjectionPlan::ProjectionPlan(std::shared_ptr<const SaeModel> model, SensitiveSet sensitive,
                               ProtectedBasis basis, double lambda)
    : model_(std::move(model)), sensitive_(std::move(sensitive)), basis_(std::move(basis)), lambda_(lambda) {
  require(model_ != nullptr, ErrorCode::kInvalidArgument, "projection plan needs an SAE");
  model_->validate();
  require(std::isfinite(lambda_) && lambda_ >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  require(basis_.dim() == model_->input_dim(), ErrorCode::kDimensionMismatch,
          "protected basis dimension differs from the SAE input dimension");
  for (Eigen::Index i : sensitive_.indices)
    require(i >= 0 && i < model_->feature_count(), ErrorCode::kOutOfRange, "sensitive index outside the SAE");
}

ProjectionPlan ProjectionPlan::from_detection(std::shared_ptr<const SaeModel> model,
                                              const DetectionPlan& detection, double lambda) {
  require(model != nullptr, ErrorCode::kInvalidArgument, "projection plan needs an SAE");
  require(detection.features == model->feature_count() && detection.input_dim == model->input_dim(),
          ErrorCode::kDimensionMismatch, "detection plan was built for a different SAE");
  for (Eigen::Index i : detection.coupled.indices)
    require(!detection.sensitive.contains(i), ErrorCode::kInvalidArgument,
            "sensitive and coupled sets must be disjoint");
  ProtectedBasis basis = build_basis(*model, detection.coupled);
  return ProjectionPlan(std::move(model), detection.sensitive, std::move(basis), lambda);
}

ProjectionPlan ProjectionPlan::with_lambda(double lambda) const {
  ProjectionPlan copy = *this;
  require(std::isfinite(lambda) && lambda >= 0.0, ErrorCode::kInvalidArgument, "lambda must be >= 0");
  copy.lambda_ = lambda;
  return copy;
}

void ProjectionPlan::reserve(ApplyWorkspace& workspace) const {
  workspace.encode.reserve(*model_);
  workspace.code.resize(model_->feature_count());
  workspace.raw.resize(model_->input_dim());
  workspace.coefficients.resize(basis_.rank);
}

void ProjectionPlan::intervene_into(const Vector& h, const Vector& code, ApplyWorkspace& workspace,
                                    Vector& out) const {
  require(h.size() == model_->input_dim(), ErrorCode::kDimensionMismatch,
          "activation length differs from the plan dimension");
  workspace.raw.setZero();
  for (Eigen::Index i : sensitive_.indices)
    if (code[i] != 0.0) workspace.raw.noalias() += code[i] * model_->decoder_weight.col(i);
  workspace.coefficients.noalias() = lambda_ * (basis_.q.transpose() * workspace.raw);
  // h - lambda (d_raw - Q Q^T d_raw), fused to keep the O(d) passes few.
  out = h - lambda_ * workspace.raw;
  out.noalias() += basis_.q * workspace.coefficients;
}

void ProjectionPlan::apply_into(const Vector& h, ApplyWorkspace& workspace, Vector& out) const {
  encode_into(*model_, h, workspace.encode, workspace.code);
  intervene_into(h, workspace.code, workspace, out);
}

Vector ProjectionPlan::apply(const Vector& h) const {
  ApplyWorkspace workspace;
  reserve(workspace);
  Vector out(h.size());
  apply_into(h, workspace, out);
  return out;
}

Matrix ProjectionPlan::apply_batch(const Matrix& batch) const {
  ApplyWorkspace workspace;
  reserve(workspace);
  Matrix out(batch.rows(), batch.cols());
  Vector h(batch.rows()), result(batch.rows());
  for (Eigen::Index j = 0; j < batch.cols(); ++j) {
    h = batch.col(j);
    apply_into(h, workspace, result);
    out.col(j) = result;
  }
  return out;
}

namespace {

// Inverse (or pseudo-inverse) of the Gram matrix applied to `rhs`.
class GramSolver {
 public:
  GramSolver(const Matrix& protected_columns, const GramOptions& options) {
    require(protected_columns.cols() >= 1, ErrorCode::kEmptyInput, "Gram form needs at least one column");
    const Matrix gram = protected_columns.transpose() * protected_columns;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    const Vector& values = eig.eigenvalues();
    const double largest = values.maxCoeff();
    const double cutoff = options.relative_tolerance * largest;
    const bool singular = largest <= 0.0 || values.minCoeff() <= cutoff;
    if (!singular && !options.pseudo_inverse) {
      cholesky_.compute(gram);
      require(cholesky_.info() == Eigen::Success, ErrorCode::kSingularGram,
              "Gram matrix is not positive definite");
      use_cholesky_ = true;
      return;
    }
    require(options.pseudo_inverse, ErrorCode::kSingularGram,
            "W_C^T W_C is singular; enable the pseudo-inverse fallback");
    Vector inverted = Vector::Zero(values.size());
    for (Eigen::Index i = 0; i < values.size(); ++i)
      if (values[i] > cutoff) inverted[i] = 1.0 / values[i];
    pseudo_ = eig.eigenvectors() * inverted.asDiagonal() * eig.eigenvectors().transpose();
  }

  Matrix solve(const Matrix& rhs) const { return use_cholesky_ ? Matrix(cholesky_.solve(rhs)) : Matrix(pseudo_ * rhs); }
  Vector solve(const Vector& rhs) const { return use_cholesky_ ? Vector(cholesky_.solve(rhs)) : Vector(pseudo_ * rhs); }

 private:
  bool use_cholesky_ = false;
  Eigen::LLT<Matrix> cholesky_;
  Matrix pseudo_;
};

}  // namespace

Matrix gram_projection(const Matrix& protected_columns, const GramOptions& options) {
  const GramSolver solver(protected_columns, options);
  const Matrix p = protected_columns * solver.solve(Matrix(protected_columns.transpose()));
  // Symmetrize away rounding asymmetry.
  return 0.5 * (p + p.transpose());
}

LagrangeSolution constrained_lsq_oracle(const Vector& raw, const Matrix& protected_columns,
                                        const GramOptions& options) {
  require(raw.size() == protected_columns.rows(), ErrorCode::kDimensionMismatch,
          "direction length differs from W_C rows");
  const GramSolver solver(protected_columns, options);
  LagrangeSolution out;
  out.multipliers = solver.solve(Vector(protected_columns.transpose() * raw));
  out.direction = raw - protected_columns * out.multipliers;
  out.stationarity_residual = ((out.direction - raw) + protected_columns * out.multipliers).norm();
  out.feasibility_residual = (protected_columns.transpose() * out.direction).norm();
  return out;
}

bool EquivalenceReport::finite() const {
  return std::isfinite(projector_gap) && std::isfinite(stationarity_residual) &&
         std::isfinite(feasibility_residual) && multipliers.allFinite();
}

EquivalenceReport equivalence_report(const Vector& raw, const ProtectedBasis& basis, const GramOptions& options) {
  EquivalenceReport report;
  const Matrix qqt = basis.q * basis.q.transpose();
  report.projector_gap = (qqt - gram_projection(basis.protected_columns, options)).cwiseAbs().maxCoeff();
  const LagrangeSolution oracle = constrained_lsq_oracle(raw, basis.protected_columns, options);
  report.stationarity_residual = oracle.stationarity_residual;
  report.feasibility_residual = oracle.feasibility_residual;
  report.multipliers = oracle.multipliers;
  return report;
}

}  // namespace orthoeraser
