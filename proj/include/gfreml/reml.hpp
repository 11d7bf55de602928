#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <string>

#include "gfreml/errors.hpp"

namespace gfreml::reml {

// Restricted profile objective for the stopping time, expressed through the
// eigenbasis coordinates c of the initial residual and the spectrum lambda:
//
//   Q(t) = n log( sum_k c_k^2 e^{-t l_k} ) + t sum_k l_k.
//
// Q is convex in t; its stationary point is the data-driven stopping time.
// All exponential sums below share one max-shift, so large t never underflows
// the whole sum at once.

namespace detail {

struct SoftmaxState {
  double log_s;          // log sum_k c_k^2 e^{-t l_k}
  Eigen::VectorXd prob;  // c_k^2 e^{-t l_k} / sum, zero where c_k = 0
};

inline void check_pair(const Eigen::VectorXd& c, const Eigen::VectorXd& lam) {
  if (c.size() != lam.size() || c.size() == 0)
    throw DimensionMismatch("reml: coefficient and eigenvalue lengths differ");
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (!(lam[k] >= 0))
      throw InvalidArgument("reml: eigenvalues must be nonnegative");
}

inline SoftmaxState softmax_state(const Eigen::VectorXd& c,
                                  const Eigen::VectorXd& lam, double t) {
  const Eigen::Index n = c.size();
  double shift = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd m(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    m[k] = c[k] != 0.0 ? 2.0 * std::log(std::abs(c[k])) - t * lam[k]
                       : -std::numeric_limits<double>::infinity();
    shift = std::max(shift, m[k]);
  }
  if (!std::isfinite(shift))
    throw AllCoefficientsZero("reml: every projected coefficient is zero");
  SoftmaxState s;
  s.prob.resize(n);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    s.prob[k] = std::isfinite(m[k]) ? std::exp(m[k] - shift) : 0.0;
    acc += s.prob[k];
  }
  s.prob /= acc;
  s.log_s = shift + std::log(acc);
  return s;
}

}  // namespace detail

inline double q_objective(const Eigen::VectorXd& c, const Eigen::VectorXd& lam,
                          double t) {
  detail::check_pair(c, lam);
  if (!(t >= 0)) throw InvalidArgument("q_objective: t must be >= 0");
  auto s = detail::softmax_state(c, lam, t);
  return static_cast<double>(c.size()) * s.log_s + t * lam.sum();
}

struct QDerivatives {
  double first;   // Q'(t)
  double second;  // Q''(t) = n * var of lambda under the softmax weights, >= 0
};

inline QDerivatives q_derivatives(const Eigen::VectorXd& c,
                                  const Eigen::VectorXd& lam, double t) {
  detail::check_pair(c, lam);
  if (!(t >= 0)) throw InvalidArgument("q_derivatives: t must be >= 0");
  auto s = detail::softmax_state(c, lam, t);
  const double n = static_cast<double>(c.size());
  const double mean_p = s.prob.dot(lam);
  QDerivatives d;
  d.first = -n * mean_p + lam.sum();
  d.second = n * s.prob.dot((lam.array() - mean_p).square().matrix());
  return d;
}

// Empirical spectral covariance between the eigenvalues and the residual
// decay profile J_k(t) = c_k^2 e^{-t l_k}:
//
//   Psi_n(t) = n^{-1} sum_k (l_k - mean(l)) (J_k - mean(J)).
//
// Positive before the stopping time, negative after; it relates to the
// objective by Q'(t) = -n^2 Psi_n(t) / sum_k J_k(t).
inline double psi(const Eigen::VectorXd& c, const Eigen::VectorXd& lam, double t) {
  detail::check_pair(c, lam);
  if (!(t >= 0)) throw InvalidArgument("psi: t must be >= 0");
  auto s = detail::softmax_state(c, lam, t);
  const double n = static_cast<double>(c.size());
  const double lam_bar = lam.mean();
  // Centered form: sum (l - mean(l)) J = S * sum (l - mean(l)) p.
  const double centered = s.prob.dot((lam.array() - lam_bar).matrix());
  return std::exp(s.log_s) * centered / n;
}

// Effective degrees of freedom sum_k (1 - e^{-t l_k}); counts each direction
// by how much of it the flow has absorbed. Tends to rank(H) as t grows.
inline double edf(const Eigen::VectorXd& lam, double t) {
  if (!(t >= 0)) throw InvalidArgument("edf: t must be >= 0");
  double acc = 0.0;
  for (Eigen::Index k = 0; k < lam.size(); ++k) acc += -std::expm1(-t * lam[k]);
  return acc;
}

inline Eigen::VectorXd esc_curve(const Eigen::VectorXd& c,
                                 const Eigen::VectorXd& lam,
                                 const Eigen::VectorXd& t_grid) {
  Eigen::VectorXd out(t_grid.size());
  for (Eigen::Index i = 0; i < t_grid.size(); ++i) out[i] = psi(c, lam, t_grid[i]);
  return out;
}

// Generalized-variance style criterion V_n(t) = n^{-1} exp(Q(t)/n); shares
// its argmin with Q by monotonicity.
inline double v_criterion(const Eigen::VectorXd& c, const Eigen::VectorXd& lam,
                          double t) {
  const double n = static_cast<double>(c.size());
  return std::exp(q_objective(c, lam, t) / n) / n;
}

enum class FitStatus { interior_root, boundary_zero, degenerate };

inline const char* to_string(FitStatus s) {
  switch (s) {
    case FitStatus::interior_root: return "interior_root";
    case FitStatus::boundary_zero: return "boundary_zero";
    default: return "degenerate";
  }
}

struct RemlFit {
  double t_hat = 0.0;
  double sigma2_hat = 0.0;  // n^{-1} sum_k c_k^2 e^{-t_hat l_k}
  double q_value = 0.0;     // Q(t_hat)
  double edf = 0.0;
  double psi_value = 0.0;   // estimating function at t_hat
  FitStatus status = FitStatus::degenerate;
  bool condition_i = false;   // Q'(0) < 0: residual energy leans on the top of the spectrum
  bool condition_ii = false;  // eigenvalue spread present
  int iterations = 0;
};

// Finds the minimizer of Q. Flat spectra (relative spread below 1e-12) are
// reported as degenerate with t_hat = 0; Q'(0) >= 0 pins the boundary.
// Otherwise the root of Q' is bracketed by doubling from 1/mean(lambda) and
// polished by Newton steps safeguarded with bisection, then the bracket is
// tightened until both |Q'| * (1/mean(lambda)) <= rel_tol and the bracket
// width is below rel_tol * t_hat. Doubling past 1e6 / min positive eigenvalue
// means Q' never turns positive (residual energy sits below the spectral
// mean for every t) and raises NoUpperBracket.
inline RemlFit solve_stopping_time(const Eigen::VectorXd& c,
                                   const Eigen::VectorXd& lam,
                                   double rel_tol = 1e-10) {
  detail::check_pair(c, lam);
  if (!(rel_tol > 0)) throw InvalidArgument("solve_stopping_time: rel_tol must be > 0");
  const double n = static_cast<double>(c.size());

  RemlFit fit;
  auto finish = [&](double t, FitStatus status, int iters) {
    auto s = detail::softmax_state(c, lam, t);
    fit.t_hat = t;
    fit.status = status;
    fit.sigma2_hat = std::exp(s.log_s - std::log(n));
    fit.q_value = n * s.log_s + t * lam.sum();
    fit.edf = edf(lam, t);
    fit.psi_value = psi(c, lam, t);
    fit.iterations = iters;
    return fit;
  };

  const double lam_max = lam.maxCoeff();
  const double lam_min = lam.minCoeff();
  fit.condition_ii = (lam_max - lam_min) >= 1e-12 * std::max(lam_max, 1e-300);
  if (!fit.condition_ii) {
    // Q is constant in t; report the left end of the flat valley.
    fit.condition_i = false;
    return finish(0.0, FitStatus::degenerate, 0);
  }

  fit.condition_i = q_derivatives(c, lam, 0.0).first < 0.0;
  if (!fit.condition_i) return finish(0.0, FitStatus::boundary_zero, 0);

  // Bracket [lo, hi] with Q'(lo) < 0 < Q'(hi).
  const double lam_bar = lam.mean();
  const double t_scale = 1.0 / lam_bar;
  double lam_min_pos = lam_max;
  for (Eigen::Index k = 0; k < lam.size(); ++k)
    if (lam[k] > 0.0) lam_min_pos = std::min(lam_min_pos, lam[k]);
  const double t_cap = 1e6 / lam_min_pos;

  int iters = 0;
  double lo = 0.0, hi = t_scale;
  while (q_derivatives(c, lam, hi).first <= 0.0) {
    lo = hi;
    hi *= 2.0;
    ++iters;
    if (hi > t_cap)
      throw NoUpperBracket(
          "solve_stopping_time: Q' stays negative up to t = " + std::to_string(t_cap));
  }

  // Newton steps safeguarded by the bracket, interleaved with bisection so
  // the bracket width and the gradient tolerance converge together.
  double x = 0.5 * (lo + hi);
  for (int it = 0; it < 400; ++it) {
    ++iters;
    const QDerivatives d = q_derivatives(c, lam, x);
    if (d.first > 0.0) hi = x; else lo = x;
    const bool grad_ok = std::abs(d.first) * t_scale <= rel_tol;
    const bool width_ok =
        hi - lo <= rel_tol * std::max(x, std::numeric_limits<double>::min());
    if (grad_ok && width_ok) break;
    double next;
    if (!grad_ok && d.second > 0.0) {
      next = x - d.first / d.second;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    } else {
      next = 0.5 * (lo + hi);
    }
    x = next;
  }
  // Unsafeguarded Newton polish: drives |Q'| to its numerical floor so the
  // plug-in quantities at t_hat (sigma2, psi) inherit full precision. Steps
  // are kept only while they shrink |Q'|.
  QDerivatives d = q_derivatives(c, lam, x);
  for (int it = 0; it < 4 && d.second > 0.0; ++it) {
    const double next = x - d.first / d.second;
    if (!(next > 0.0) || !std::isfinite(next)) break;
    const QDerivatives dn = q_derivatives(c, lam, next);
    ++iters;
    if (std::abs(dn.first) >= std::abs(d.first)) break;
    x = next;
    d = dn;
  }
  return finish(x, FitStatus::interior_root, iters);
}

}  // namespace gfreml::reml
