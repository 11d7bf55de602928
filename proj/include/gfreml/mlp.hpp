#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gfreml/errors.hpp"

namespace gfreml::mlp {

// Fully connected network: ReLU on hidden layers, identity output head,
// scalar output. widths lists every layer including input and output,
// e.g. {10, 256, 256, 1}.
struct MlpNetwork {
  std::vector<int> widths;
  std::vector<Eigen::MatrixXd> weights;  // weights[l] is widths[l+1] x widths[l]
  std::vector<Eigen::VectorXd> biases;
};

inline void validate_widths(const std::vector<int>& widths) {
  if (widths.size() < 2)
    throw InvalidArgument("mlp: need at least input and output widths");
  for (int w : widths)
    if (w < 1) throw InvalidArgument("mlp: widths must be positive");
  if (widths.back() != 1)
    throw InvalidArgument("mlp: output width must be 1");
}

inline Eigen::Index param_count(const MlpNetwork& net) {
  Eigen::Index p = 0;
  for (std::size_t l = 0; l + 1 < net.widths.size(); ++l)
    p += static_cast<Eigen::Index>(net.widths[l + 1]) * net.widths[l] + net.widths[l + 1];
  return p;
}

// He-normal initialization: every weight entry ~ N(0, 2 / fan_in), biases
// zero. Draw order is pinned (layers in order, each weight matrix row-major),
// so a seed reproduces the network exactly.
inline MlpNetwork init(const std::vector<int>& widths, std::uint64_t seed) {
  validate_widths(widths);
  MlpNetwork net;
  net.widths = widths;
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const int fan_out = widths[l + 1];
    const double sd = std::sqrt(2.0 / fan_in);
    Eigen::MatrixXd w(fan_out, fan_in);
    for (int i = 0; i < fan_out; ++i)
      for (int j = 0; j < fan_in; ++j) w(i, j) = sd * nd(gen);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Zero(fan_out));
  }
  return net;
}

inline void check_input_dim(const MlpNetwork& net, Eigen::Index d) {
  if (net.widths.empty() || d != net.widths.front())
    throw DimensionMismatch("mlp: input dimension " + std::to_string(d) +
                            " does not match network width");
}

// Batch forward pass, one prediction per row of X.
inline Eigen::VectorXd forward(const MlpNetwork& net, const Eigen::MatrixXd& X) {
  check_input_dim(net, X.cols());
  Eigen::MatrixXd a = X;
  const std::size_t L = net.weights.size();
  for (std::size_t l = 0; l < L; ++l) {
    Eigen::MatrixXd z = (a * net.weights[l].transpose()).rowwise() +
                        net.biases[l].transpose();
    a = std::move(z);
    if (l + 1 < L) a = a.cwiseMax(0.0);
  }
  return a.col(0);
}

inline double forward_one(const MlpNetwork& net, const Eigen::VectorXd& x) {
  return forward(net, x.transpose())[0];
}

// Gradient of the scalar output with respect to all parameters, flattened
// layer by layer: weight matrix in row-major order, then the bias vector.
// ReLU passes gradient only where the preactivation is strictly positive.
inline Eigen::VectorXd grad_params(const MlpNetwork& net, const Eigen::VectorXd& x) {
  check_input_dim(net, x.size());
  const std::size_t L = net.weights.size();
  std::vector<Eigen::VectorXd> acts(L + 1);
  std::vector<Eigen::VectorXd> pre(L);
  acts[0] = x;
  for (std::size_t l = 0; l < L; ++l) {
    pre[l] = net.weights[l] * acts[l] + net.biases[l];
    acts[l + 1] = (l + 1 < L) ? pre[l].cwiseMax(0.0).eval() : pre[l];
    // ReLU only on hidden layers; the output head stays linear.
  }

  Eigen::VectorXd grad(param_count(net));
  Eigen::VectorXd delta = Eigen::VectorXd::Ones(1);  // d f / d z_L
  Eigen::Index offset = grad.size();
  for (std::size_t l = L; l-- > 0;) {
    const Eigen::Index rows = net.weights[l].rows();
    const Eigen::Index cols = net.weights[l].cols();
    offset -= rows * cols + rows;
    Eigen::MatrixXd gw = delta * acts[l].transpose();
    for (Eigen::Index i = 0; i < rows; ++i)
      grad.segment(offset + i * cols, cols) = gw.row(i);
    grad.segment(offset + rows * cols, rows) = delta;
    if (l > 0) {
      delta = (net.weights[l].transpose() * delta).cwiseProduct(
          (pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return grad;
}

struct TrainTrace {
  std::vector<double> train_mse;  // entry k is the MSE before step k+1; entry 0 is at init
  std::vector<double> test_mse;   // same indexing; empty when no test set is given
  std::vector<Eigen::VectorXd> checkpoints;  // in-sample predictions per epoch, optional
};

// Full-batch gradient descent on L(theta) = 1/2 * sum_i (f(x_i) - y_i)^2.
// The loss driving updates is unnormalized; the recorded MSEs are means.
// Training aborts with Diverged once the train MSE exceeds 1e6 times its
// initial value (or stops being finite).
inline TrainTrace train_full_batch(MlpNetwork& net, const Eigen::MatrixXd& X,
                                   const Eigen::VectorXd& y, double eta, int epochs,
                                   const Eigen::MatrixXd* X_test = nullptr,
                                   const Eigen::VectorXd* y_test = nullptr,
                                   bool keep_checkpoints = false) {
  check_input_dim(net, X.cols());
  const Eigen::Index n = X.rows();
  if (y.size() != n) throw DimensionMismatch("train_full_batch: |y| != rows of X");
  if (n == 0) throw InvalidArgument("train_full_batch: empty training set");
  if (!(eta > 0)) throw InvalidArgument("train_full_batch: eta must be > 0");
  if (epochs < 0) throw InvalidArgument("train_full_batch: epochs must be >= 0");
  const bool with_test = X_test != nullptr && y_test != nullptr;
  if (with_test && y_test->size() != X_test->rows())
    throw DimensionMismatch("train_full_batch: test sizes disagree");

  const std::size_t L = net.weights.size();
  TrainTrace trace;
  trace.train_mse.reserve(epochs + 1);
  double initial_mse = -1.0;

  for (int epoch = 0; epoch <= epochs; ++epoch) {
    // Forward pass with cached activations; index 0 holds the input batch.
    std::vector<Eigen::MatrixXd> acts(L + 1);
    acts[0] = X;
    for (std::size_t l = 0; l < L; ++l) {
      Eigen::MatrixXd z = (acts[l] * net.weights[l].transpose()).rowwise() +
                          net.biases[l].transpose();
      acts[l + 1] = std::move(z);
      if (l + 1 < L) acts[l + 1] = acts[l + 1].cwiseMax(0.0);
    }
    Eigen::VectorXd fhat = acts[L].col(0);
    const double mse = (fhat - y).squaredNorm() / static_cast<double>(n);
    if (epoch == 0) initial_mse = mse;
    if (!std::isfinite(mse) || mse > 1e6 * std::max(initial_mse, 1e-300))
      throw Diverged("train_full_batch: train MSE " + std::to_string(mse) +
                     " after " + std::to_string(epoch) + " epochs");
    trace.train_mse.push_back(mse);
    if (with_test)
      trace.test_mse.push_back((forward(net, *X_test) - *y_test).squaredNorm() /
                               static_cast<double>(X_test->rows()));
    if (keep_checkpoints) trace.checkpoints.push_back(fhat);
    if (epoch == epochs) break;

    // Backward pass: delta holds dL/dz for the current layer, one row per example.
    Eigen::MatrixXd delta = (fhat - y);
    for (std::size_t l = L; l-- > 0;) {
      Eigen::MatrixXd gw = delta.transpose() * acts[l];
      Eigen::VectorXd gb = delta.colwise().sum().transpose();
      if (l > 0)
        delta = (delta * net.weights[l]).cwiseProduct(
            (acts[l].array() > 0.0).cast<double>().matrix());
      net.weights[l] -= eta * gw;
      net.biases[l] -= eta * gb;
    }
  }
  return trace;
}

}  // namespace gfreml::mlp
