#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "gfreml/errors.hpp"

namespace gfreml::spectral {

// Eigendecomposition of a PSD operator, held in the form every downstream
// module consumes: eigenvalues sorted descending and clamped at zero, columns
// of `eigenvectors` aligned with them.
struct SpectralOperator {
  Eigen::VectorXd eigenvalues;   // descending, clamped to >= 0
  Eigen::MatrixXd eigenvectors;  // orthonormal columns, sign-normalized
  int rank = 0;                  // eigenvalues surviving the clamp
  double mean_eigenvalue = 0.0;  // mean of the stored (clamped) spectrum
};

// Decomposes a symmetric PSD matrix. Asymmetry beyond 1e-8 relative to the
// largest entry is rejected; smaller asymmetry is symmetrized away before the
// solve. Eigenvalues inside (-clamp, clamp) with clamp = clamp_rel_tol * |l1|
// are snapped to exactly zero; anything below -clamp means the input is not
// PSD. Each eigenvector is sign-normalized so its largest-magnitude entry
// (first such entry on ties) is positive, which makes the basis reproducible
// across runs.
inline SpectralOperator eigendecompose(const Eigen::MatrixXd& H,
                                       double clamp_rel_tol = 1e-12) {
  const Eigen::Index n = H.rows();
  if (n == 0 || H.cols() != n)
    throw DimensionMismatch("eigendecompose: H must be square and non-empty");
  if (!(clamp_rel_tol >= 0))
    throw InvalidArgument("eigendecompose: clamp_rel_tol must be >= 0");

  const double scale = H.cwiseAbs().maxCoeff();
  const double asym = (H - H.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8 * std::max(scale, 1e-300))
    throw NonSymmetric("eigendecompose: input asymmetry " + std::to_string(asym) +
                       " exceeds 1e-8 relative tolerance");

  Eigen::MatrixXd S = 0.5 * (H + H.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(S);
  if (solver.info() != Eigen::Success)
    throw EigenSolverFailure("eigendecompose: solver did not converge");

  SpectralOperator op;
  op.eigenvalues = solver.eigenvalues().reverse();
  op.eigenvectors = solver.eigenvectors().rowwise().reverse();

  const double clamp = clamp_rel_tol * std::abs(op.eigenvalues[0]);
  for (Eigen::Index k = 0; k < n; ++k) {
    double& lam = op.eigenvalues[k];
    if (lam < -clamp)
      throw NotPSD("eigendecompose: eigenvalue " + std::to_string(lam) +
                   " below -" + std::to_string(clamp));
    if (lam < clamp) lam = 0.0;
    if (lam > 0.0) op.rank = static_cast<int>(k) + 1;

    Eigen::Index imax = 0;
    op.eigenvectors.col(k).cwiseAbs().maxCoeff(&imax);
    if (op.eigenvectors(imax, k) < 0.0) op.eigenvectors.col(k) = -op.eigenvectors.col(k);
  }
  op.mean_eigenvalue = op.eigenvalues.mean();
  return op;
}

// Coordinates of r in the eigenbasis: c = V^T r.
inline Eigen::VectorXd project(const SpectralOperator& op, const Eigen::VectorXd& r) {
  if (r.size() != op.eigenvectors.rows())
    throw DimensionMismatch("project: r has wrong length");
  return op.eigenvectors.transpose() * r;
}

// exp(-tH) r in the eigenbasis. t = 0 returns r unchanged, exactly.
inline Eigen::VectorXd decay_action(const SpectralOperator& op, double t,
                                    const Eigen::VectorXd& r) {
  if (!(t >= 0)) throw InvalidArgument("decay_action: t must be >= 0");
  if (r.size() != op.eigenvectors.rows())
    throw DimensionMismatch("decay_action: r has wrong length");
  if (t == 0.0) return r;
  Eigen::VectorXd c = op.eigenvectors.transpose() * r;
  c.array() *= (-t * op.eigenvalues.array()).exp();
  return op.eigenvectors * c;
}

// H^+ (I - exp(-tH)) r: the weight vector carrying an in-sample flow fit to
// out-of-sample prediction. Clamped directions contribute exactly zero; the
// per-eigenvalue factor (1 - e^{-t l}) / l is evaluated with expm1 so small
// t*l does not cancel.
inline Eigen::VectorXd pinv_flow_weights(const SpectralOperator& op, double t,
                                         const Eigen::VectorXd& r) {
  if (!(t >= 0)) throw InvalidArgument("pinv_flow_weights: t must be >= 0");
  if (r.size() != op.eigenvectors.rows())
    throw DimensionMismatch("pinv_flow_weights: r has wrong length");
  Eigen::VectorXd c = op.eigenvectors.transpose() * r;
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const double lam = op.eigenvalues[k];
    c[k] = lam > 0.0 ? -std::expm1(-t * lam) / lam * c[k] : 0.0;
  }
  return op.eigenvectors * c;
}

}  // namespace gfreml::spectral
