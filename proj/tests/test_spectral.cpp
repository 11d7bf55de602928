#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "gfreml/spectral.hpp"
#include "helpers.hpp"

using gfreml::spectral::decay_action;
using gfreml::spectral::eigendecompose;
using gfreml::spectral::pinv_flow_weights;
using gfreml::spectral::project;
using gfreml::spectral::SpectralOperator;

TEST_CASE("eigendecompose on a diagonal matrix", "[spectral]") {
  Eigen::MatrixXd h = Eigen::Vector2d(3.0, 1.0).asDiagonal();
  SpectralOperator op = eigendecompose(h);
  REQUIRE(op.eigenvalues[0] == Catch::Approx(3.0).margin(1e-14));
  REQUIRE(op.eigenvalues[1] == Catch::Approx(1.0).margin(1e-14));
  REQUIRE(op.rank == 2);
  REQUIRE(op.mean_eigenvalue == Catch::Approx(2.0).margin(1e-14));
  // Diagonal input: eigenvectors are coordinate axes, sign-normalized.
  REQUIRE((op.eigenvectors - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("eigendecompose of a rank-one outer product", "[spectral]") {
  Eigen::Vector2d x(1.0, 2.0);
  Eigen::MatrixXd h = x * x.transpose();
  SpectralOperator op = eigendecompose(h);
  REQUIRE(op.eigenvalues[0] == Catch::Approx(5.0).margin(1e-12));
  REQUIRE(op.eigenvalues[1] == 0.0);  // clamped exactly
  REQUIRE(op.rank == 1);
  // Leading eigenvector is x/|x| with its largest-magnitude entry positive.
  REQUIRE(op.eigenvectors(0, 0) == Catch::Approx(1.0 / std::sqrt(5.0)).margin(1e-12));
  REQUIRE(op.eigenvectors(1, 0) == Catch::Approx(2.0 / std::sqrt(5.0)).margin(1e-12));
  // Null direction, sign convention puts the magnitude-2 entry positive.
  REQUIRE(op.eigenvectors(0, 1) == Catch::Approx(2.0 / std::sqrt(5.0)).margin(1e-12));
  REQUIRE(op.eigenvectors(1, 1) == Catch::Approx(-1.0 / std::sqrt(5.0)).margin(1e-12));
}

TEST_CASE("eigendecompose reconstructs random PSD matrices", "[spectral]") {
  auto gen = testutil::rng(17);
  for (int trial = 0; trial < 8; ++trial) {
    Eigen::Index n = 3 + trial;
    Eigen::MatrixXd h = testutil::random_psd(n, gen);
    SpectralOperator op = eigendecompose(h);
    Eigen::MatrixXd rec = op.eigenvectors * op.eigenvalues.asDiagonal() *
                          op.eigenvectors.transpose();
    REQUIRE((rec - h).cwiseAbs().maxCoeff() < 1e-10);
    Eigen::MatrixXd gram = op.eigenvectors.transpose() * op.eigenvectors;
    REQUIRE((gram - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() < 1e-10);
    for (Eigen::Index k = 0; k + 1 < n; ++k)
      REQUIRE(op.eigenvalues[k] >= op.eigenvalues[k + 1]);
    REQUIRE(op.eigenvalues.minCoeff() >= 0.0);
  }
}

TEST_CASE("eigendecompose snaps tiny eigenvalues to zero", "[spectral]") {
  Eigen::MatrixXd h = Eigen::Vector2d(1.0, 1e-15).asDiagonal();
  SpectralOperator op = eigendecompose(h);
  REQUIRE(op.eigenvalues[1] == 0.0);
  REQUIRE(op.rank == 1);
}

TEST_CASE("eigendecompose rejects indefinite and asymmetric input", "[spectral]") {
  Eigen::MatrixXd indef = Eigen::Vector2d(1.0, -1.0).asDiagonal();
  REQUIRE_THROWS_AS(eigendecompose(indef), gfreml::NotPSD);

  Eigen::MatrixXd asym(2, 2);
  asym << 1.0, 0.1, 0.0, 1.0;
  REQUIRE_THROWS_AS(eigendecompose(asym), gfreml::NonSymmetric);

  // Asymmetry below the relative gate is symmetrized away, not rejected.
  Eigen::MatrixXd nearsym(2, 2);
  nearsym << 1.0, 1e-10, 0.0, 1.0;
  REQUIRE_NOTHROW(eigendecompose(nearsym));
}

TEST_CASE("project preserves norms and reconstructs", "[spectral]") {
  auto gen = testutil::rng(41);
  Eigen::MatrixXd h = testutil::random_psd(6, gen);
  SpectralOperator op = eigendecompose(h);
  Eigen::VectorXd r = testutil::random_vector(6, gen);
  Eigen::VectorXd c = project(op, r);
  REQUIRE(c.norm() == Catch::Approx(r.norm()).epsilon(1e-12));
  REQUIRE((op.eigenvectors * c - r).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("decay_action matches a hand value and the series oracle", "[spectral]") {
  // 1x1 case: exp(-ln 2) * 2 = 1.
  Eigen::MatrixXd h1(1, 1);
  h1 << 1.0;
  Eigen::VectorXd r1(1);
  r1 << 2.0;
  Eigen::VectorXd out = decay_action(eigendecompose(h1), std::log(2.0), r1);
  REQUIRE(out[0] == Catch::Approx(1.0).margin(1e-14));

  // Random PSD vs scaling-and-squaring series, an eigendecomposition-free oracle.
  auto gen = testutil::rng(7);
  Eigen::MatrixXd h = testutil::random_psd(5, gen);
  Eigen::VectorXd r = testutil::random_vector(5, gen);
  SpectralOperator op = eigendecompose(h);
  for (double t : {0.05, 0.7, 3.0}) {
    Eigen::VectorXd got = decay_action(op, t, r);
    Eigen::VectorXd want = testutil::expm_neg(h, t) * r;
    REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("decay_action at t=0 is the identity, exactly", "[spectral]") {
  auto gen = testutil::rng(11);
  SpectralOperator op = eigendecompose(testutil::random_psd(4, gen));
  Eigen::VectorXd r = testutil::random_vector(4, gen);
  Eigen::VectorXd out = decay_action(op, 0.0, r);
  REQUIRE((out.array() == r.array()).all());
}

TEST_CASE("decay_action satisfies the semigroup property", "[spectral]") {
  auto gen = testutil::rng(23);
  SpectralOperator op = eigendecompose(testutil::random_psd(6, gen));
  Eigen::VectorXd r = testutil::random_vector(6, gen);
  Eigen::VectorXd two_step = decay_action(op, 0.4, decay_action(op, 1.1, r));
  Eigen::VectorXd one_step = decay_action(op, 1.5, r);
  REQUIRE((two_step - one_step).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pinv_flow_weights hand value, null space, and large-t limit", "[spectral]") {
  // diag(2), r = 1, t = ln(2)/2: (1 - e^{-ln 2}) / 2 = 0.25.
  Eigen::MatrixXd h1(1, 1);
  h1 << 2.0;
  Eigen::VectorXd r1(1);
  r1 << 1.0;
  Eigen::VectorXd w = pinv_flow_weights(eigendecompose(h1), 0.5 * std::log(2.0), r1);
  REQUIRE(w[0] == Catch::Approx(0.25).margin(1e-14));

  // t = 0 gives an exact zero vector.
  REQUIRE(pinv_flow_weights(eigendecompose(h1), 0.0, r1).cwiseAbs().maxCoeff() == 0.0);

  // Clamped directions contribute nothing: feed the null eigenvector through.
  Eigen::Vector2d x(1.0, 2.0);
  SpectralOperator rank1 = eigendecompose(Eigen::MatrixXd(x * x.transpose()));
  Eigen::VectorXd null_dir = rank1.eigenvectors.col(1);
  REQUIRE(pinv_flow_weights(rank1, 3.0, null_dir).cwiseAbs().maxCoeff() < 1e-14);

  // t -> infinity recovers the pseudoinverse action on a full-rank operator.
  auto gen = testutil::rng(31);
  Eigen::MatrixXd h = testutil::random_psd(5, gen);
  SpectralOperator op = eigendecompose(h);
  Eigen::VectorXd r = testutil::random_vector(5, gen);
  Eigen::VectorXd got = pinv_flow_weights(op, 1e8, r);
  Eigen::VectorXd want = h.ldlt().solve(r);
  REQUIRE((got - want).cwiseAbs().maxCoeff() < 1e-8);
}
