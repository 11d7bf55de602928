#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "gfreml/mlp.hpp"

// Shared generators and brute-force oracles for the unit suites. Everything
// here is deliberately independent of the library internals so tests compare
// against a second opinion, not against the code under test.
namespace testutil {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols,
                                     std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = nd(gen);
  return m;
}

inline Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& gen) {
  std::normal_distribution<double> nd(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = nd(gen);
  return v;
}

// PSD matrix A A^T / n with A of shape n x k; k < n gives rank deficiency.
inline Eigen::MatrixXd random_psd(Eigen::Index n, std::mt19937_64& gen,
                                  Eigen::Index k = -1) {
  if (k < 0) k = n;
  Eigen::MatrixXd a = random_matrix(n, k, gen);
  return (a * a.transpose()) / static_cast<double>(n);
}

// exp(-tH) by scaling-and-squaring with a Taylor core. Oracle use only: it
// never touches an eigendecomposition.
inline Eigen::MatrixXd expm_neg(const Eigen::MatrixXd& H, double t) {
  const Eigen::Index n = H.rows();
  Eigen::MatrixXd a = -t * H;
  int squarings = 0;
  double norm = a.cwiseAbs().rowwise().sum().maxCoeff();
  while (norm > 0.25) {
    norm /= 2.0;
    ++squarings;
  }
  a /= std::pow(2.0, squarings);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(n, n);
  Eigen::MatrixXd sum = term;
  for (int j = 1; j < 40; ++j) {
    term = (term * a) / static_cast<double>(j);
    sum += term;
    if (term.cwiseAbs().maxCoeff() < 1e-19) break;
  }
  for (int s = 0; s < squarings; ++s) sum = sum * sum;
  return sum;
}

// Flat-parameter access mirroring the documented gradient layout (layers in
// order, weights row-major, then bias). Reimplemented here, independently of
// grad_params, so the layout contract itself is exercised by tests.
inline double get_param(const gfreml::mlp::MlpNetwork& net, Eigen::Index idx) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Eigen::Index wcount = net.weights[l].size();
    if (idx < wcount)
      return net.weights[l](idx / net.weights[l].cols(), idx % net.weights[l].cols());
    idx -= wcount;
    if (idx < net.biases[l].size()) return net.biases[l][idx];
    idx -= net.biases[l].size();
  }
  return std::nan("");
}

inline void add_param(gfreml::mlp::MlpNetwork& net, Eigen::Index idx, double delta) {
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    const Eigen::Index wcount = net.weights[l].size();
    if (idx < wcount) {
      net.weights[l](idx / net.weights[l].cols(), idx % net.weights[l].cols()) += delta;
      return;
    }
    idx -= wcount;
    if (idx < net.biases[l].size()) {
      net.biases[l][idx] += delta;
      return;
    }
    idx -= net.biases[l].size();
  }
}

// Central-difference gradient of the network output in parameter space.
inline Eigen::VectorXd fd_grad_params(const gfreml::mlp::MlpNetwork& net,
                                      const Eigen::VectorXd& x) {
  const Eigen::Index p = gfreml::mlp::param_count(net);
  Eigen::VectorXd g(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double h = 1e-4 * std::max(1.0, std::abs(get_param(net, j)));
    auto plus = net, minus = net;
    add_param(plus, j, h);
    add_param(minus, j, -h);
    g[j] = (gfreml::mlp::forward_one(plus, x) - gfreml::mlp::forward_one(minus, x)) /
           (2.0 * h);
  }
  return g;
}

}  // namespace testutil
