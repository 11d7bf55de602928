#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <utility>

#include "gfreml/errors.hpp"
#include "gfreml/spectral.hpp"

namespace gfreml::flow {

// State for the closed-form squared-error gradient flow driven by a fixed PSD
// operator: fitted values follow f0 + (I - e^{-tH})(y - f0). Everything is
// precomputed at build time; queries at any t are O(n^2) or cheaper, and the
// model is immutable afterwards, so concurrent reads are safe.
struct FlowModel {
  spectral::SpectralOperator op;
  Eigen::VectorXd f0_train;   // initial predictions on the training inputs
  Eigen::VectorXd y;
  Eigen::VectorXd residual0;  // y - f0_train
  Eigen::VectorXd coeffs;     // eigenbasis coordinates of residual0
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> cross;  // h(x, X), optional
  std::function<double(const Eigen::VectorXd&)> f0_fn;           // f0(x), optional
};

inline FlowModel build(
    spectral::SpectralOperator op, Eigen::VectorXd f0_train, Eigen::VectorXd y,
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> cross = nullptr,
    std::function<double(const Eigen::VectorXd&)> f0_fn = nullptr) {
  const Eigen::Index n = op.eigenvectors.rows();
  if (f0_train.size() != n || y.size() != n)
    throw DimensionMismatch("flow::build: f0_train and y must have length n");
  FlowModel m;
  m.op = std::move(op);
  m.f0_train = std::move(f0_train);
  m.y = std::move(y);
  m.residual0 = m.y - m.f0_train;
  m.coeffs = spectral::project(m.op, m.residual0);
  m.cross = std::move(cross);
  m.f0_fn = std::move(f0_fn);
  return m;
}

// In-sample fitted values f0 + (I - e^{-tH}) r0. At t = 0 this is f0, exactly.
inline Eigen::VectorXd fit_in_sample(const FlowModel& m, double t) {
  if (!(t >= 0)) throw InvalidArgument("fit_in_sample: t must be >= 0");
  Eigen::VectorXd shrunk = m.coeffs;
  for (Eigen::Index k = 0; k < shrunk.size(); ++k)
    shrunk[k] *= -std::expm1(-t * m.op.eigenvalues[k]);
  return m.f0_train + m.op.eigenvectors * shrunk;
}

// Out-of-sample prediction f0(x) + h(x, X) H^+ (I - e^{-tH}) r0. The weight
// vector depends only on t, so the batch overload hoists it.
inline Eigen::VectorXd predict(const FlowModel& m, const Eigen::MatrixXd& X_new,
                               double t) {
  if (!m.cross)
    throw MissingCrossOperator("flow::predict: model built without a cross-kernel map");
  if (!m.f0_fn)
    throw MissingCrossOperator("flow::predict: model built without an f0 function");
  Eigen::VectorXd w = spectral::pinv_flow_weights(m.op, t, m.residual0);
  Eigen::VectorXd out(X_new.rows());
  for (Eigen::Index i = 0; i < X_new.rows(); ++i) {
    Eigen::VectorXd x = X_new.row(i).transpose();
    out[i] = m.f0_fn(x) + m.cross(x).dot(w);
  }
  return out;
}

inline double predict_one(const FlowModel& m, const Eigen::VectorXd& x, double t) {
  return predict(m, Eigen::MatrixXd(x.transpose()), t)[0];
}

// Best linear unbiased predictor of the signal component under the
// random-effects reading of the flow: u_hat = Cov(u_t, r0) Var(r0)^{-1} r0,
// evaluated in the eigenbasis as (sigma2 (e^{t l} - 1)) / (sigma2 e^{t l})
// per direction. The noise scale cancels; any positive value gives the same
// predictor, so it is fixed at 1 here. This is deliberately NOT the
// (1 - e^{-t l}) shortcut: keeping the covariance form makes the equivalence
// with fit_in_sample a substantive check rather than an identity. For
// t*l > 700 both covariance factors overflow double range and the predictor
// falls back to the algebraically equal -expm1(-t l).
inline Eigen::VectorXd blup(const FlowModel& m, double t) {
  if (!(t >= 0)) throw InvalidArgument("blup: t must be >= 0");
  const double sigma2 = 1.0;
  Eigen::VectorXd c = m.coeffs;
  for (Eigen::Index k = 0; k < c.size(); ++k) {
    const double tl = t * m.op.eigenvalues[k];
    if (tl > 700.0) {
      c[k] *= -std::expm1(-tl);
    } else {
      const double cov_u_r = sigma2 * std::expm1(tl);  // Cov(u_t, r0) direction k
      const double var_r = sigma2 * std::exp(tl);      // Var(r0) direction k
      c[k] *= cov_u_r / var_r;
    }
  }
  return m.op.eigenvectors * c;
}

// Trace decomposition of the stationary variance at time t. Proportions are
// computed in log space, so they stay exact when tr e^{tH} overflows; gamma_t
// itself may round to +inf in that regime.
struct VarianceAllocation {
  double gamma_t;               // n^{-1} tr e^{tH}
  double sigma2_eps_t;          // sigma2 / gamma_t
  double noise_trace;           // tr var(eps_t) = n^2 sigma2 / tr e^{tH}
  double signal_trace;          // tr var(u_t) = n sigma2 - noise_trace
  double explained_proportion;  // signal_trace / (n sigma2)
};

inline VarianceAllocation variance_allocation(const FlowModel& m, double t,
                                              double sigma2) {
  if (!(t >= 0)) throw InvalidArgument("variance_allocation: t must be >= 0");
  if (!(sigma2 >= 0)) throw InvalidArgument("variance_allocation: sigma2 must be >= 0");
  const Eigen::VectorXd& lam = m.op.eigenvalues;
  const double n = static_cast<double>(lam.size());
  // log sum exp(t l_k), shifted by the top eigenvalue.
  const double top = t * lam[0];
  double acc = 0.0;
  for (Eigen::Index k = 0; k < lam.size(); ++k) acc += std::exp(t * lam[k] - top);
  const double log_tr = top + std::log(acc);

  VarianceAllocation va;
  va.gamma_t = std::exp(log_tr - std::log(n));
  va.sigma2_eps_t = sigma2 / va.gamma_t;
  va.noise_trace = sigma2 * std::exp(2.0 * std::log(n) - log_tr);
  va.signal_trace = n * sigma2 - va.noise_trace;
  va.explained_proportion = -std::expm1(std::log(n) - log_tr);
  return va;
}

// Per-direction shrinkage path: fitted coefficients a_k = c_k (1 - e^{-t l_k})
// and the residual decay profile c_k^2 e^{-t l_k}. Clamped directions keep
// a_k = 0 and decay c_k^2 for all t.
struct SpectralCoefficients {
  Eigen::VectorXd a_hat;
  Eigen::VectorXd decay;
};

inline SpectralCoefficients spectral_coefficients(const FlowModel& m, double t) {
  if (!(t >= 0)) throw InvalidArgument("spectral_coefficients: t must be >= 0");
  SpectralCoefficients sc;
  sc.a_hat = m.coeffs;
  sc.decay = m.coeffs.array().square();
  for (Eigen::Index k = 0; k < m.coeffs.size(); ++k) {
    const double e = std::exp(-t * m.op.eigenvalues[k]);
    sc.a_hat[k] *= -std::expm1(-t * m.op.eigenvalues[k]);
    sc.decay[k] *= e;
  }
  return sc;
}

}  // namespace gfreml::flow
