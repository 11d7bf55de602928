#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>

#include "gfreml/reml.hpp"
#include "helpers.hpp"

namespace reml = gfreml::reml;

namespace {

// The worked two-direction instance used throughout: lambda = (2, 0),
// c = (2, 1). Its stopping time is ln 2 and the plug-in noise variance is 1.
const Eigen::Vector2d kLam(2.0, 0.0);
const Eigen::Vector2d kC(2.0, 1.0);

// Raw-definition evaluation of the spectral covariance, no shared shift.
double psi_oracle(const Eigen::VectorXd& c, const Eigen::VectorXd& lam, double t) {
  const Eigen::Index n = c.size();
  Eigen::VectorXd j(n);
  for (Eigen::Index k = 0; k < n; ++k) j[k] = c[k] * c[k] * std::exp(-t * lam[k]);
  const double lam_bar = lam.mean(), j_bar = j.mean();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) acc += (lam[k] - lam_bar) * (j[k] - j_bar);
  return acc / static_cast<double>(n);
}

struct Instance {
  Eigen::VectorXd c, lam;
};

Instance random_instance(int n, std::mt19937_64& gen) {
  Instance inst;
  inst.c = testutil::random_vector(n, gen);
  inst.lam = testutil::random_vector(n, gen).cwiseAbs();
  std::sort(inst.lam.data(), inst.lam.data() + n, std::greater<double>());
  return inst;
}

}  // namespace

TEST_CASE("q_objective frozen values", "[reml]") {
  REQUIRE(reml::q_objective(kC, kLam, 0.0) ==
          Catch::Approx(2.0 * std::log(5.0)).margin(1e-13));
  REQUIRE(reml::q_objective(kC, kLam, std::log(2.0)) ==
          Catch::Approx(4.0 * std::log(2.0)).margin(1e-13));
}

TEST_CASE("q_derivatives frozen values and convexity", "[reml]") {
  auto d0 = reml::q_derivatives(kC, kLam, 0.0);
  REQUIRE(d0.first == Catch::Approx(-1.2).margin(1e-13));
  REQUIRE(d0.second == Catch::Approx(1.28).margin(1e-13));

  auto gen = testutil::rng(601);
  for (int trial = 0; trial < 5; ++trial) {
    auto inst = random_instance(7, gen);
    for (double t : {0.0, 0.3, 1.0, 4.0})
      REQUIRE(reml::q_derivatives(inst.c, inst.lam, t).second >= 0.0);
  }
}

TEST_CASE("q_derivatives agree with finite differences of q_objective", "[reml]") {
  auto gen = testutil::rng(602);
  auto inst = random_instance(6, gen);
  for (double t : {0.1, 0.9, 2.5}) {
    const double h = 1e-5;
    const double fd1 = (reml::q_objective(inst.c, inst.lam, t + h) -
                        reml::q_objective(inst.c, inst.lam, t - h)) / (2.0 * h);
    const double fd2 = (reml::q_derivatives(inst.c, inst.lam, t + h).first -
                        reml::q_derivatives(inst.c, inst.lam, t - h).first) / (2.0 * h);
    auto d = reml::q_derivatives(inst.c, inst.lam, t);
    REQUIRE(d.first == Catch::Approx(fd1).epsilon(1e-6).margin(1e-7));
    REQUIRE(d.second == Catch::Approx(fd2).epsilon(1e-6).margin(1e-7));
  }
}

TEST_CASE("psi frozen value, raw-definition oracle, and gradient identity",
          "[reml]") {
  REQUIRE(reml::psi(kC, kLam, 0.0) == Catch::Approx(1.5).margin(1e-13));

  auto gen = testutil::rng(603);
  for (int trial = 0; trial < 5; ++trial) {
    auto inst = random_instance(8, gen);
    for (double t : {0.0, 0.4, 1.7}) {
      const double got = reml::psi(inst.c, inst.lam, t);
      REQUIRE(got == Catch::Approx(psi_oracle(inst.c, inst.lam, t)).epsilon(1e-12));

      // Q'(t) = -n^2 Psi(t) / sum_k c_k^2 e^{-t l_k}, S evaluated raw.
      double s = 0.0;
      for (Eigen::Index k = 0; k < 8; ++k)
        s += inst.c[k] * inst.c[k] * std::exp(-t * inst.lam[k]);
      const double lhs = reml::q_derivatives(inst.c, inst.lam, t).first;
      REQUIRE(lhs == Catch::Approx(-64.0 * got / s).epsilon(1e-9).margin(1e-12));
    }
  }
}

TEST_CASE("edf frozen value, monotonicity, saturation at the rank", "[reml]") {
  REQUIRE(reml::edf(kLam, std::log(2.0)) == Catch::Approx(0.75).margin(1e-14));
  REQUIRE(reml::edf(kLam, 0.0) == 0.0);

  Eigen::Vector4d lam(3.0, 1.0, 0.5, 0.0);
  double prev = -1.0;
  for (double t : {0.1, 0.5, 2.0, 10.0}) {
    const double e = reml::edf(lam, t);
    REQUIRE(e > prev);
    prev = e;
  }
  REQUIRE(reml::edf(lam, 1e9) == Catch::Approx(3.0).margin(1e-12));  // rank, not n
}

TEST_CASE("v_criterion frozen value and shared argmin with Q", "[reml]") {
  REQUIRE(reml::v_criterion(kC, kLam, std::log(2.0)) == Catch::Approx(2.0).margin(1e-13));

  auto gen = testutil::rng(604);
  auto inst = random_instance(9, gen);
  Eigen::Index best_q = 0, best_v = 0;
  double q_min = 1e300, v_min = 1e300;
  for (Eigen::Index i = 0; i < 400; ++i) {
    const double t = 0.01 * static_cast<double>(i + 1);
    const double q = reml::q_objective(inst.c, inst.lam, t);
    const double v = reml::v_criterion(inst.c, inst.lam, t);
    if (q < q_min) { q_min = q; best_q = i; }
    if (v < v_min) { v_min = v; best_v = i; }
  }
  REQUIRE(best_q == best_v);
}

TEST_CASE("solve_stopping_time closed-form instance", "[reml]") {
  auto fit = reml::solve_stopping_time(kC, kLam);
  REQUIRE(fit.status == reml::FitStatus::interior_root);
  REQUIRE(fit.condition_i);
  REQUIRE(fit.condition_ii);
  REQUIRE(fit.t_hat == Catch::Approx(std::log(2.0)).margin(1e-10));
  REQUIRE(fit.sigma2_hat == Catch::Approx(1.0).margin(1e-12));
  REQUIRE(fit.q_value == Catch::Approx(4.0 * std::log(2.0)).margin(1e-12));
  REQUIRE(fit.edf == Catch::Approx(0.75).margin(1e-10));
  REQUIRE(std::abs(fit.psi_value) < 1e-12);
  REQUIRE(fit.iterations > 0);
}

TEST_CASE("solve_stopping_time boundary and degenerate statuses", "[reml]") {
  // Residual energy on the small eigenvalue only: Q'(0) = 1 >= 0.
  Eigen::Vector2d lam(2.0, 1.0), c(0.0, 1.0);
  auto fit = reml::solve_stopping_time(c, lam);
  REQUIRE(fit.status == reml::FitStatus::boundary_zero);
  REQUIRE(fit.t_hat == 0.0);
  REQUIRE_FALSE(fit.condition_i);
  REQUIRE(fit.condition_ii);
  REQUIRE(fit.sigma2_hat == Catch::Approx(0.5).margin(1e-14));  // |c|^2 / n

  Eigen::Vector2d flat(1.0, 1.0), cf(1.0, 2.0);
  auto dfit = reml::solve_stopping_time(cf, flat);
  REQUIRE(dfit.status == reml::FitStatus::degenerate);
  REQUIRE(dfit.t_hat == 0.0);
  REQUIRE_FALSE(dfit.condition_ii);
}

TEST_CASE("solve_stopping_time scale equivariance", "[reml]") {
  auto gen = testutil::rng(605);
  // Correlate c with the top of the spectrum so the root is interior.
  Eigen::VectorXd lam(6), c(6);
  lam << 5.0, 3.0, 2.0, 1.0, 0.5, 0.1;
  c << 3.0, 2.0, 1.0, 0.3, 0.2, 0.1;
  auto base = reml::solve_stopping_time(c, lam);
  REQUIRE(base.status == reml::FitStatus::interior_root);

  const double s = 7.0;
  auto scaled_lam = reml::solve_stopping_time(c, Eigen::VectorXd(s * lam));
  REQUIRE(scaled_lam.t_hat == Catch::Approx(base.t_hat / s).epsilon(1e-8));

  auto scaled_c = reml::solve_stopping_time(Eigen::VectorXd(s * c), lam);
  REQUIRE(scaled_c.t_hat == Catch::Approx(base.t_hat).epsilon(1e-8));
  REQUIRE(scaled_c.sigma2_hat == Catch::Approx(s * s * base.sigma2_hat).epsilon(1e-8));
}

TEST_CASE("solve_stopping_time agrees with a dense grid argmin", "[reml]") {
  auto gen = testutil::rng(606);
  for (int trial = 0; trial < 3; ++trial) {
    Eigen::VectorXd lam = testutil::random_vector(12, gen).cwiseAbs() * 2.0;
    Eigen::VectorXd c = testutil::random_vector(12, gen);
    // Tilt energy toward large eigenvalues to land in the interior regime.
    for (int k = 0; k < 12; ++k) c[k] *= 1.0 + lam[k];
    reml::RemlFit fit;
    try {
      fit = reml::solve_stopping_time(c, lam);
    } catch (const gfreml::NoUpperBracket&) {
      continue;
    }
    if (fit.status != reml::FitStatus::interior_root) continue;

    const double t_lo = 1e-3 / lam.maxCoeff();
    const double t_hi = 1e3 / lam.minCoeff();
    const int points = 200000;
    double best_t = t_lo, best_q = 1e300;
    for (int i = 0; i < points; ++i) {
      const double t =
          t_lo * std::pow(t_hi / t_lo, static_cast<double>(i) / (points - 1));
      const double q = reml::q_objective(c, lam, t);
      if (q < best_q) { best_q = q; best_t = t; }
    }
    REQUIRE(fit.t_hat == Catch::Approx(best_t).epsilon(1e-3));
  }
}

TEST_CASE("solve_stopping_time reports a missing upper bracket", "[reml]") {
  // Energy pinned above the spectral mean for every t: Q' is constant -0.3.
  Eigen::Vector4d lam(2.0, 1.9, 1.9, 1.9), c(1.0, 0.0, 0.0, 0.0);
  REQUIRE_THROWS_AS(reml::solve_stopping_time(c, lam), gfreml::NoUpperBracket);
}

TEST_CASE("esc_curve changes sign exactly once around the stopping time", "[reml]") {
  Eigen::VectorXd lam(6), c(6);
  lam << 5.0, 3.0, 2.0, 1.0, 0.5, 0.1;
  c << 3.0, 2.0, 1.0, 0.3, 0.2, 0.1;
  auto fit = reml::solve_stopping_time(c, lam);
  REQUIRE(fit.status == reml::FitStatus::interior_root);

  Eigen::VectorXd grid(40);
  for (int i = 0; i < 40; ++i)
    grid[i] = fit.t_hat * std::pow(10.0, -1.0 + 2.0 * i / 39.0);
  Eigen::VectorXd curve = reml::esc_curve(c, lam, grid);
  int crossings = 0;
  for (int i = 0; i + 1 < 40; ++i) {
    if (curve[i] > 0.0 && curve[i + 1] < 0.0) ++crossings;
    REQUIRE((grid[i] < fit.t_hat ? curve[i] > 0.0 : true));
    REQUIRE((grid[i] > fit.t_hat * (1 + 1e-6) ? curve[i] < 0.0 : true));
  }
  REQUIRE(crossings == 1);
}

TEST_CASE("reml handles the deep-decay regime without underflow", "[reml]") {
  Eigen::Vector3d lam(3.0, 2.0, 1.0), c(1.0, 1.0, 1.0);
  const double t = 1e5;
  REQUIRE(std::isfinite(reml::q_objective(c, lam, t)));
  // Softmax collapses onto the smallest eigenvalue: Q' -> -3*1 + 6.
  REQUIRE(reml::q_derivatives(c, lam, t).first == Catch::Approx(3.0).margin(1e-9));
}

TEST_CASE("reml input validation", "[reml]") {
  Eigen::Vector2d lam(1.0, 2.0), c(1.0, 1.0);
  REQUIRE_THROWS_AS(reml::q_objective(c, Eigen::Vector2d(1.0, -0.5), 1.0),
                    gfreml::InvalidArgument);
  REQUIRE_THROWS_AS(reml::q_objective(c, lam, -1.0), gfreml::InvalidArgument);
  REQUIRE_THROWS_AS(reml::q_objective(Eigen::Vector3d::Ones(), lam, 1.0),
                    gfreml::DimensionMismatch);
  REQUIRE_THROWS_AS(reml::solve_stopping_time(Eigen::Vector2d::Zero(), lam),
                    gfreml::AllCoefficientsZero);
}
