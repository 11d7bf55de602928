#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "gfreml/errors.hpp"
#include "gfreml/parallel.hpp"
#include "gfreml/spectral.hpp"

namespace gfreml::vctest {

enum class PvalueMethod { imhof, monte_carlo };

inline const char* to_string(PvalueMethod m) {
  return m == PvalueMethod::imhof ? "imhof" : "monte_carlo";
}

// Result of the variance-component score test. `projected_eigenvalues` is the
// spectrum of H-tilde = M^T H M, descending. score_statistic fills everything
// except the p-value block; score_test completes it.
struct ScoreTestResult {
  double statistic = 0.0;
  double p_value = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd projected_eigenvalues;
  PvalueMethod method = PvalueMethod::imhof;
  double integration_error = 0.0;
  bool centered_fallback = false;
};

struct ChisqPvalue {
  double p = 0.0;
  double error = 0.0;  // imhof: bound on |p - truth|; monte carlo: binomial SE
  PvalueMethod method = PvalueMethod::imhof;
};

namespace detail {

// The projector I - f0 f0^T / |f0|^2 is undefined at f0 = 0; callers switch
// to mean-centering below this threshold.
inline bool zero_direction(const Eigen::VectorXd& f0) {
  return f0.norm() < 1e-12 * std::sqrt(static_cast<double>(f0.size()));
}

// One adaptive-Simpson refinement. `force` levels of mandatory splitting guard
// against aliasing before the 15x Richardson criterion is trusted; ok drops to
// false when the depth budget runs out with the local tolerance unmet.
template <class F>
inline double simpson_step(const F& f, double a, double b, double fa, double fm,
                           double fb, double whole, double tol, int depth,
                           int force, bool& ok) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (force <= 0 && std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  if (depth <= 0) {
    ok = false;
    return left + right + delta / 15.0;
  }
  return simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, force - 1, ok) +
         simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, force - 1, ok);
}

template <class F>
inline double integrate_adaptive(const F& f, double a, double b, double tol, bool& ok) {
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fm, fb, whole, tol, 48, 4, ok);
}

inline std::vector<double> nonzero_weights(const Eigen::VectorXd& weights) {
  std::vector<double> w;
  w.reserve(static_cast<std::size_t>(weights.size()));
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    if (!std::isfinite(weights[k]))
      throw InvalidArgument("pvalue_weighted_chisq: weights must be finite");
    if (weights[k] != 0.0) w.push_back(weights[k]);
  }
  if (weights.size() == 0 || w.empty())
    throw AllWeightsZero("pvalue_weighted_chisq: needs at least one nonzero weight");
  return w;
}

}  // namespace detail

// P(sum_k w_k z_k^2 >= 0) by Monte Carlo: `draws` quadratic forms in iid
// standard normals, counted in fixed-size batches with per-batch seeds so the
// result does not depend on the worker count.
inline ChisqPvalue pvalue_weighted_chisq_mc(const Eigen::VectorXd& weights,
                                            long long draws = 10000000,
                                            std::uint64_t seed = 20240913ull,
                                            int threads = max_threads()) {
  const std::vector<double> w = detail::nonzero_weights(weights);
  if (draws < 1) throw InvalidArgument("pvalue_weighted_chisq_mc: draws must be >= 1");

  const long long batch = 131072;
  const std::size_t nbatch = static_cast<std::size_t>((draws + batch - 1) / batch);
  std::vector<long long> hits(nbatch, 0);
  parallel_for(
      nbatch,
      [&](std::size_t b) {
        std::mt19937_64 gen(seed ^ (0x9e3779b97f4a7c15ull * (b + 1)));
        std::normal_distribution<double> normal;
        const long long lo = batch * static_cast<long long>(b);
        const long long hi = std::min(draws, lo + batch);
        long long h = 0;
        for (long long i = lo; i < hi; ++i) {
          double q = 0.0;
          for (double wk : w) {
            const double z = normal(gen);
            q += wk * z * z;
          }
          h += q >= 0.0;
        }
        hits[b] = h;
      },
      threads);

  long long total = 0;
  for (long long h : hits) total += h;

  ChisqPvalue out;
  out.p = static_cast<double>(total) / static_cast<double>(draws);
  out.error = std::sqrt(out.p * (1.0 - out.p) / static_cast<double>(draws));
  out.method = PvalueMethod::monte_carlo;
  return out;
}

// P(sum_k w_k z_k^2 >= 0), z_k iid standard normal, by numerical inversion of
// the characteristic function evaluated at the origin:
//
//   p = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du,
//   theta(u) = (1/2) sum_k arctan(w_k u),  rho(u) = prod_k (1 + w_k^2 u^2)^{1/4}.
//
// The weights are normalized by max|w_k| first (p is invariant under positive
// scaling). Truncation at U uses rho(u) >= u^{m/2} prod_{top-m} |w_k|^{1/2}:
// the tail beyond U is at most (2 / (pi m)) U^{-m/2} / P_m, and m is chosen to
// minimize the U that pushes this below tol/2. The remaining [0, U] integral
// runs on geometrically growing segments with an adaptive Simpson budget of
// pi*tol/2 in total. If the quadrature cannot converge, falls back to the
// deterministic Monte Carlo above (method flag reports which path ran).
inline ChisqPvalue pvalue_weighted_chisq(const Eigen::VectorXd& weights,
                                         double tol = 1e-6) {
  if (!(tol > 0.0 && tol < 0.1))
    throw InvalidArgument("pvalue_weighted_chisq: tol must be in (0, 0.1)");
  std::vector<double> w = detail::nonzero_weights(weights);

  int n_pos = 0, n_neg = 0;
  double wmax = 0.0;
  for (double wk : w) {
    (wk > 0.0 ? n_pos : n_neg) += 1;
    wmax = std::max(wmax, std::abs(wk));
  }
  ChisqPvalue out;
  if (n_neg == 0) {
    out.p = 1.0;
    return out;
  }
  if (n_pos == 0) {
    out.p = 0.0;
    return out;
  }
  for (double& wk : w) wk /= wmax;

  std::vector<double> aw(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) aw[k] = std::abs(w[k]);
  std::sort(aw.begin(), aw.end(), std::greater<double>());

  double log_pm = 0.0;
  double best_log_u = std::numeric_limits<double>::infinity();
  for (std::size_t m = 1; m <= aw.size(); ++m) {
    log_pm += 0.5 * std::log(aw[m - 1]);
    const double log_u =
        (2.0 / static_cast<double>(m)) *
        (std::log(4.0 / std::numbers::pi) - std::log(static_cast<double>(m)) -
         std::log(tol) - log_pm);
    best_log_u = std::min(best_log_u, log_u);
  }
  if (!(best_log_u < 690.0)) return pvalue_weighted_chisq_mc(weights);
  const double upper = std::exp(std::max(best_log_u, 0.0));

  auto integrand = [&w](double u) -> double {
    if (u <= 0.0) {
      double s = 0.0;
      for (double wk : w) s += wk;
      return 0.5 * s;
    }
    double theta = 0.0, log_rho4 = 0.0;
    for (double wk : w) {
      const double wu = wk * u;
      theta += std::atan(wu);
      log_rho4 += std::log1p(wu * wu);
    }
    return std::sin(0.5 * theta) * std::exp(-std::log(u) - 0.25 * log_rho4);
  };

  int nseg = 1;
  for (double b = 1.0; b < upper; b *= 2.0) ++nseg;
  const double seg_tol = std::numbers::pi * 0.5 * tol / nseg;

  bool ok = true;
  double integral = 0.0;
  double a = 0.0, b = std::min(1.0, upper);
  for (;;) {
    integral += detail::integrate_adaptive(integrand, a, b, seg_tol, ok);
    if (!ok || b >= upper) break;
    a = b;
    b = std::min(2.0 * b, upper);
  }
  if (!ok) return pvalue_weighted_chisq_mc(weights);

  out.p = std::clamp(0.5 + integral / std::numbers::pi, 0.0, 1.0);
  out.error = tol;
  return out;
}

// Orthonormal basis of the hyperplane orthogonal to f0, assembled from the
// Householder reflection P = I - 2uu^T/u^Tu with u = f0/|f0| + sign(f0_1) e1.
// P maps f0/|f0| to -sign(f0_1) e1, so dropping the first column of P leaves
// n-1 orthonormal columns with M^T f0 = 0 and M M^T = I - f0 f0^T / |f0|^2.
inline Eigen::MatrixXd orthogonal_complement_basis(const Eigen::VectorXd& f0) {
  const Eigen::Index n = f0.size();
  if (n < 2)
    throw InvalidArgument("orthogonal_complement_basis: need n >= 2");
  if (detail::zero_direction(f0))
    throw ZeroInitialization(
        "orthogonal_complement_basis: direction has (near-)zero norm");

  Eigen::VectorXd u = f0 / f0.norm();
  u[0] += u[0] >= 0.0 ? 1.0 : -1.0;
  const double beta = 2.0 / u.squaredNorm();
  Eigen::MatrixXd M(n, n - 1);
  for (Eigen::Index j = 0; j + 1 < n; ++j) {
    M.col(j) = (-beta * u[j + 1]) * u;
    M(j + 1, j) += 1.0;
  }
  return M;
}

// Ratio statistic on the subspace orthogonal to the initialized prediction:
// with yt = M^T y and mu the spectrum of M^T H M,
//   T = (n-1) yt^T (M^T H M) yt / yt^T yt,
// evaluated in the eigenbasis so the Rayleigh bounds hold for the clamped
// spectrum exactly. A (near-)zero f0 switches M to the complement of the
// all-ones vector (mean centering) and flags the result.
inline ScoreTestResult score_statistic(const Eigen::VectorXd& y,
                                       const Eigen::VectorXd& f0,
                                       const Eigen::MatrixXd& H) {
  const Eigen::Index n = y.size();
  if (n < 3) throw InvalidArgument("score_statistic: need n >= 3");
  if (f0.size() != n || H.rows() != n || H.cols() != n)
    throw DimensionMismatch("score_statistic: y, f0, H disagree on n");

  ScoreTestResult r;
  Eigen::MatrixXd M;
  if (detail::zero_direction(f0)) {
    M = orthogonal_complement_basis(Eigen::VectorXd::Ones(n));
    r.centered_fallback = true;
  } else {
    M = orthogonal_complement_basis(f0);
  }

  const Eigen::VectorXd yt = M.transpose() * y;
  if (yt.norm() <= 1e-14 * y.norm())
    throw ZeroProjectedResponse(
        "score_statistic: response is confined to the projected-out direction");

  const spectral::SpectralOperator op = spectral::eigendecompose(M.transpose() * H * M);
  const Eigen::VectorXd c = spectral::project(op, yt);
  r.statistic = static_cast<double>(n - 1) * op.eigenvalues.dot(c.cwiseProduct(c)) /
                c.squaredNorm();
  r.projected_eigenvalues = op.eigenvalues;
  return r;
}

// Score test of "no training-induced signal". Under the null the projected
// response is spherical, so with q = T/(n-1)
//   P(T_null >= T) = P(sum_k (mu_k - q) z_k^2 >= 0),
// an exact weighted-chi-square probability; the ratio form cancels the noise
// variance. Weights below 1e-14 of the largest magnitude are dropped; if the
// whole spectrum collapses that way (H-tilde proportional to I) the statistic
// is pinned at its only attainable value and p = 1.
inline ScoreTestResult score_test(const Eigen::VectorXd& y,
                                  const Eigen::VectorXd& f0,
                                  const Eigen::MatrixXd& H, double tol = 1e-6) {
  ScoreTestResult r = score_statistic(y, f0, H);
  const Eigen::Index m = r.projected_eigenvalues.size();
  const double q = r.statistic / static_cast<double>(m);
  const Eigen::VectorXd w = r.projected_eigenvalues.array() - q;

  const double wmax = w.cwiseAbs().maxCoeff();
  if (wmax <= 1e-14 * r.projected_eigenvalues[0]) {
    r.p_value = 1.0;
    return r;
  }

  std::vector<double> kept;
  kept.reserve(static_cast<std::size_t>(m));
  for (Eigen::Index k = 0; k < m; ++k)
    if (std::abs(w[k]) >= 1e-14 * wmax) kept.push_back(w[k]);
  const Eigen::VectorXd kw =
      Eigen::Map<const Eigen::VectorXd>(kept.data(), static_cast<Eigen::Index>(kept.size()));

  const ChisqPvalue pv = pvalue_weighted_chisq(kw, tol);
  r.p_value = pv.p;
  r.method = pv.method;
  r.integration_error = pv.error;
  return r;
}

}  // namespace gfreml::vctest
