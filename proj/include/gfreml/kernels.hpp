#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>

#include "gfreml/errors.hpp"
#include "gfreml/mlp.hpp"

namespace gfreml::kernels {

// A Gram operator over the training inputs plus the matching cross-kernel
// map h(x, X) for out-of-sample prediction. H is exactly symmetric: the lower
// triangle is computed once and mirrored.
struct GramResult {
  Eigen::MatrixXd H;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> cross;
};

namespace detail {

inline void mirror_lower(Eigen::MatrixXd& h) {
  h.triangularView<Eigen::StrictlyUpper>() = h.transpose();
}

inline void check_nonempty(const Eigen::MatrixXd& X, const char* who) {
  if (X.rows() == 0 || X.cols() == 0)
    throw InvalidArgument(std::string(who) + ": X must be non-empty");
}

inline void check_dim(Eigen::Index d, const Eigen::VectorXd& x, const char* who) {
  if (x.size() != d)
    throw DimensionMismatch(std::string(who) + ": query has dimension " +
                            std::to_string(x.size()) + ", expected " +
                            std::to_string(d));
}

}  // namespace detail

// Linear kernel H = X X^T.
inline GramResult gram_linear(const Eigen::MatrixXd& X) {
  detail::check_nonempty(X, "gram_linear");
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  h.selfadjointView<Eigen::Lower>().rankUpdate(X);
  detail::mirror_lower(h);
  GramResult out;
  out.H = std::move(h);
  out.cross = [X, d](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    detail::check_dim(d, x, "gram_linear.cross");
    return X * x;
  };
  return out;
}

// Gaussian kernel exp(-|x - x'|^2 / (2 b^2)). Unit diagonal by construction.
inline GramResult gram_rbf(const Eigen::MatrixXd& X, double bandwidth) {
  detail::check_nonempty(X, "gram_rbf");
  if (!(bandwidth > 0)) throw InvalidArgument("gram_rbf: bandwidth must be > 0");
  const Eigen::Index n = X.rows(), d = X.cols();
  const double inv2b2 = 1.0 / (2.0 * bandwidth * bandwidth);
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    h(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j)
      h(i, j) = std::exp(-(X.row(i) - X.row(j)).squaredNorm() * inv2b2);
  }
  detail::mirror_lower(h);
  GramResult out;
  out.H = std::move(h);
  out.cross = [X, d, inv2b2](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    detail::check_dim(d, x, "gram_rbf.cross");
    Eigen::VectorXd k(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i)
      k[i] = std::exp(-(X.row(i).transpose() - x).squaredNorm() * inv2b2);
    return k;
  };
  return out;
}

namespace detail {

// Arc-cosine updates for the infinite-width ReLU recursion. With the
// 2*E[relu'(u) relu'(v)] normalization both kappas equal 1 at rho = 1, so
// diagonal entries are preserved layer to layer.
inline double kappa0(double rho) {
  return (std::numbers::pi - std::acos(rho)) / std::numbers::pi;
}

inline double kappa1(double rho) {
  const double ang = std::acos(rho);
  return (std::sqrt(std::max(0.0, 1.0 - rho * rho)) +
          (std::numbers::pi - ang) * rho) / std::numbers::pi;
}

// One pair (x, x') through `depth` hidden layers. sxx and syy are the
// layer-invariant diagonal covariances |x|^2/d and |x'|^2/d; sxy is x.x'/d.
inline double ntk_pair(double sxx, double syy, double sxy, int depth) {
  const double denom = std::sqrt(sxx * syy);
  double sigma = sxy;
  double theta = sxy;
  for (int l = 0; l < depth; ++l) {
    const double rho = std::clamp(sigma / denom, -1.0, 1.0);
    const double dot = kappa0(rho);
    sigma = denom * kappa1(rho);
    theta = sigma + theta * dot;
  }
  return theta;
}

}  // namespace detail

// Infinite-width fully connected ReLU tangent kernel with `depth` hidden
// layers, base covariance x.x'/d. Rows of zero norm make the angular
// recursion undefined and are rejected.
inline GramResult gram_ntk_analytic(const Eigen::MatrixXd& X, int depth) {
  detail::check_nonempty(X, "gram_ntk_analytic");
  if (depth < 1) throw InvalidArgument("gram_ntk_analytic: depth must be >= 1");
  const Eigen::Index n = X.rows(), d = X.cols();
  Eigen::VectorXd diag(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    diag[i] = X.row(i).squaredNorm() / static_cast<double>(d);
    if (diag[i] <= 0.0)
      throw ZeroNormInput("gram_ntk_analytic: row " + std::to_string(i) +
                          " has zero norm");
  }
  Eigen::MatrixXd h(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double sxy = X.row(i).dot(X.row(j)) / static_cast<double>(d);
      h(i, j) = detail::ntk_pair(diag[i], diag[j], sxy, depth);
    }
  }
  detail::mirror_lower(h);
  GramResult out;
  out.H = std::move(h);
  out.cross = [X, d, diag, depth](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    detail::check_dim(d, x, "gram_ntk_analytic.cross");
    const double sxx = x.squaredNorm() / static_cast<double>(d);
    if (sxx <= 0.0) throw ZeroNormInput("gram_ntk_analytic.cross: zero-norm query");
    Eigen::VectorXd k(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
      const double sxy = X.row(i).dot(x) / static_cast<double>(d);
      k[i] = detail::ntk_pair(diag[i], sxx, sxy, depth);
    }
    return k;
  };
  return out;
}

// Finite-width tangent kernel of a concrete network at its current weights:
// H = J J^T with J the per-example parameter Jacobian. Built as a rank update
// so symmetry is exact. The cross map shares J and differentiates the network
// at each query.
inline GramResult gram_ntk_empirical(const Eigen::MatrixXd& X,
                                     const mlp::MlpNetwork& net) {
  detail::check_nonempty(X, "gram_ntk_empirical");
  mlp::check_input_dim(net, X.cols());
  const Eigen::Index n = X.rows(), d = X.cols();
  auto jac = std::make_shared<Eigen::MatrixXd>(n, mlp::param_count(net));
  for (Eigen::Index i = 0; i < n; ++i)
    jac->row(i) = mlp::grad_params(net, X.row(i).transpose()).transpose();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(n, n);
  h.selfadjointView<Eigen::Lower>().rankUpdate(*jac);
  detail::mirror_lower(h);
  GramResult out;
  out.H = std::move(h);
  out.cross = [jac, net, d](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    detail::check_dim(d, x, "gram_ntk_empirical.cross");
    return *jac * mlp::grad_params(net, x);
  };
  return out;
}

}  // namespace gfreml::kernels
