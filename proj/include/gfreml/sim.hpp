#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "gfreml/errors.hpp"
#include "gfreml/spectral.hpp"

namespace gfreml::harness {

// Simulation scenarios. test_null / test_alt drive the score-test studies,
// case1..case3 the early-stopping studies; test_alt and case2 share the same
// ground truth.
enum class ScenarioName { test_null, test_alt, case1, case2, case3 };

inline const char* to_string(ScenarioName s) {
  switch (s) {
    case ScenarioName::test_null: return "test_null";
    case ScenarioName::test_alt: return "test_alt";
    case ScenarioName::case1: return "case1";
    case ScenarioName::case2: return "case2";
    case ScenarioName::case3: return "case3";
  }
  return "unknown";
}

inline ScenarioName parse_scenario(const std::string& s) {
  if (s == "test_null") return ScenarioName::test_null;
  if (s == "test_alt") return ScenarioName::test_alt;
  if (s == "case1") return ScenarioName::case1;
  if (s == "case2") return ScenarioName::case2;
  if (s == "case3") return ScenarioName::case3;
  throw InvalidArgument("unknown scenario '" + s + "'");
}

struct SimScenario {
  ScenarioName name = ScenarioName::test_null;
  int n_train = 500;
  int n_test = 500;
  int d = 10;
  double noise_sd = 0.5;  // epsilon ~ N(0, noise_sd^2)
  std::uint64_t seed = 1;
};

// Ground-truth regression functions. All formulas read the first ten
// coordinates of x.
inline double ground_truth(ScenarioName s, const Eigen::VectorXd& x) {
  switch (s) {
    case ScenarioName::test_null:
      return 0.0;
    case ScenarioName::test_alt:
    case ScenarioName::case2:
      return 0.25 * x[0] + 0.15 * x[1] * x[1] + 0.1 * x[2] * x[3] +
             0.2 * std::sin(x[4]) + 0.15 * std::cos(x[5]) * std::sin(x[6]) +
             0.05 * x[7] * x[8] * x[9];
    case ScenarioName::case1:
      return 0.1 * x[0] + 0.16 * std::tanh(x[1]) + 0.2 * std::sin(x[2]) +
             0.12 * x[3] + 0.06 * x[4] * x[4] + 0.01 * std::exp(x[5]) +
             0.2 * std::cos(x[6]) + 0.1 * std::abs(x[7]) + 0.08 * x[8] +
             0.14 * std::sin(x[9]);
    case ScenarioName::case3:
      return 2.0 * std::cos(std::sin(x[0] * x[1] + x[2] * x[3] * x[4]) +
                            std::sin(x[2] * x[3] * x[4]) +
                            2.0 * (std::sin(x[5]) * std::sin(x[6]) +
                                   std::sin(x[7]) * std::sin(x[8]) * std::sin(x[9])));
  }
  throw InvalidArgument("ground_truth: unknown scenario");
}

struct SimData {
  Eigen::MatrixXd x_train, x_test;
  Eigen::VectorXd y_train, y_test;
  Eigen::VectorXd f_train, f_test;  // ground-truth values
};

// Draws one dataset. The draw order is pinned so datasets are bitwise
// reproducible: X_train row by row, then X_test row by row, then the train
// noise, then the test noise, every entry a standard normal (noise scaled by
// noise_sd afterwards).
inline SimData generate(const SimScenario& sc, std::uint64_t seed) {
  if (sc.n_train < 1) throw InvalidArgument("generate: n_train must be >= 1");
  if (sc.n_test < 0) throw InvalidArgument("generate: n_test must be >= 0");
  if (!(sc.noise_sd > 0.0)) throw InvalidArgument("generate: noise_sd must be > 0");
  const int min_d = sc.name == ScenarioName::test_null ? 1 : 10;
  if (sc.d < min_d)
    throw InvalidArgument("generate: this scenario needs d >= " + std::to_string(min_d));

  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;

  SimData data;
  data.x_train.resize(sc.n_train, sc.d);
  for (int i = 0; i < sc.n_train; ++i)
    for (int j = 0; j < sc.d; ++j) data.x_train(i, j) = normal(gen);
  data.x_test.resize(sc.n_test, sc.d);
  for (int i = 0; i < sc.n_test; ++i)
    for (int j = 0; j < sc.d; ++j) data.x_test(i, j) = normal(gen);

  data.f_train.resize(sc.n_train);
  for (int i = 0; i < sc.n_train; ++i)
    data.f_train[i] = ground_truth(sc.name, data.x_train.row(i).transpose());
  data.f_test.resize(sc.n_test);
  for (int i = 0; i < sc.n_test; ++i)
    data.f_test[i] = ground_truth(sc.name, data.x_test.row(i).transpose());

  data.y_train.resize(sc.n_train);
  for (int i = 0; i < sc.n_train; ++i)
    data.y_train[i] = data.f_train[i] + sc.noise_sd * normal(gen);
  data.y_test.resize(sc.n_test);
  for (int i = 0; i < sc.n_test; ++i)
    data.y_test[i] = data.f_test[i] + sc.noise_sd * normal(gen);
  return data;
}

// Closed-form in-sample prediction risk of the flow when the truth is known:
//   E_n(t) = n^{-1} sum_k [ b_k^2 e^{-2 t l_k} + s2 (1 - e^{-t l_k})^2 ] + s2,
// with b_k the eigen-coordinates of f_star(X) - f0(X) and s2 the noise
// variance. The decay factors run through expm1 so small t*l does not cancel.
struct OracleRisk {
  Eigen::VectorXd b_coeffs;
  Eigen::VectorXd eigenvalues;
  double sigma2 = 0.0;

  double at(double t) const {
    if (!(t >= 0.0)) throw InvalidArgument("OracleRisk::at: t must be >= 0");
    const Eigen::Index n = b_coeffs.size();
    double acc = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      const double em = std::expm1(-t * eigenvalues[k]);  // e^{-tl} - 1
      const double decay = 1.0 + em;
      acc += b_coeffs[k] * b_coeffs[k] * decay * decay + sigma2 * em * em;
    }
    return acc / static_cast<double>(n) + sigma2;
  }
};

inline OracleRisk oracle_risk(const spectral::SpectralOperator& op,
                              const Eigen::VectorXd& f_star_train,
                              const Eigen::VectorXd& f0_train, double sigma2) {
  if (f_star_train.size() != op.eigenvectors.rows() ||
      f0_train.size() != op.eigenvectors.rows())
    throw DimensionMismatch("oracle_risk: vector lengths disagree with the operator");
  if (!(sigma2 >= 0.0)) throw InvalidArgument("oracle_risk: sigma2 must be >= 0");

  OracleRisk risk;
  risk.b_coeffs = spectral::project(op, f_star_train - f0_train);
  risk.eigenvalues = op.eigenvalues;
  risk.sigma2 = sigma2;
  return risk;
}

struct GridMinimum {
  double t = 0.0;
  double value = 0.0;
};

// Minimum of the oracle risk over {0} plus a log-spaced grid on
// [t_min, t_max]. t = 0 is always a candidate so the pure-noise case lands on
// its analytic minimizer.
inline GridMinimum min_on_log_grid(const OracleRisk& risk, double t_min,
                                   double t_max, int points) {
  if (!(t_min > 0.0) || !(t_max >= t_min))
    throw InvalidArgument("min_on_log_grid: need 0 < t_min <= t_max");
  if (points < 2) throw InvalidArgument("min_on_log_grid: points must be >= 2");

  GridMinimum best{0.0, risk.at(0.0)};
  const double log_lo = std::log(t_min), log_hi = std::log(t_max);
  for (int i = 0; i < points; ++i) {
    const double t =
        std::exp(log_lo + (log_hi - log_lo) * i / static_cast<double>(points - 1));
    const double v = risk.at(t);
    if (v < best.value) best = {t, v};
  }
  return best;
}

}  // namespace gfreml::harness
