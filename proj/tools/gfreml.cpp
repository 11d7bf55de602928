#include <CLI11.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "gfreml/errors.hpp"
#include "gfreml/experiments.hpp"
#include "gfreml/flow.hpp"
#include "gfreml/io.hpp"
#include "gfreml/kernels.hpp"
#include "gfreml/mlp.hpp"
#include "gfreml/parallel.hpp"
#include "gfreml/reml.hpp"
#include "gfreml/sim.hpp"
#include "gfreml/spectral.hpp"
#include "gfreml/vctest.hpp"

namespace {

using namespace gfreml;

struct KernelChoice {
  std::string name = "linear";
  double bandwidth = 1.0;
  int depth = 1;   // hidden layers (ntk kernels)
  int width = 500; // hidden width (ntk-empirical)
  std::uint64_t seed = 1;
};

void add_kernel_options(CLI::App* cmd, KernelChoice& kc) {
  cmd->add_option("--kernel", kc.name, "training operator")
      ->required()
      ->check(CLI::IsMember({"linear", "rbf", "ntk-analytic", "ntk-empirical"}));
  cmd->add_option("--bandwidth", kc.bandwidth, "rbf length scale (default 1)");
  cmd->add_option("--depth", kc.depth, "hidden layers for ntk kernels (default 1)");
  cmd->add_option("--width", kc.width,
                  "hidden width for ntk-empirical (default 500)");
  cmd->add_option("--seed", kc.seed,
                  "initialization seed for ntk-empirical (default 1)");
}

struct BuiltKernel {
  kernels::GramResult gram;
  Eigen::VectorXd f0;
  std::function<double(const Eigen::VectorXd&)> f0_fn;
};

// The empirical tangent kernel starts the flow at the network's own initial
// predictions; the data-independent kernels start it at zero.
BuiltKernel build_kernel(const KernelChoice& kc, const Eigen::MatrixXd& X) {
  BuiltKernel bk;
  if (kc.name == "ntk-empirical") {
    std::vector<int> widths;
    widths.push_back(static_cast<int>(X.cols()));
    for (int l = 0; l < kc.depth; ++l) widths.push_back(kc.width);
    widths.push_back(1);
    const auto net = std::make_shared<mlp::MlpNetwork>(mlp::init(widths, kc.seed));
    bk.gram = kernels::gram_ntk_empirical(X, *net);
    bk.f0 = mlp::forward(*net, X);
    bk.f0_fn = [net](const Eigen::VectorXd& x) { return mlp::forward_one(*net, x); };
    return bk;
  }
  if (kc.name == "linear") {
    bk.gram = kernels::gram_linear(X);
  } else if (kc.name == "rbf") {
    bk.gram = kernels::gram_rbf(X, kc.bandwidth);
  } else if (kc.name == "ntk-analytic") {
    bk.gram = kernels::gram_ntk_analytic(X, kc.depth);
  } else {
    throw InvalidArgument("unknown kernel '" + kc.name + "'");
  }
  bk.f0 = Eigen::VectorXd::Zero(X.rows());
  bk.f0_fn = [](const Eigen::VectorXd&) { return 0.0; };
  return bk;
}

nlohmann::json kernel_json(const KernelChoice& kc) {
  nlohmann::json j;
  j["name"] = kc.name;
  if (kc.name == "rbf") j["bandwidth"] = kc.bandwidth;
  if (kc.name == "ntk-analytic" || kc.name == "ntk-empirical") j["depth"] = kc.depth;
  if (kc.name == "ntk-empirical") {
    j["width"] = kc.width;
    j["seed"] = kc.seed;
  }
  return j;
}

void run_fit(const std::string& data_path, const KernelChoice& kc,
             const std::string& out_path) {
  const io::Dataset ds = io::read_csv_data(data_path);
  const BuiltKernel bk = build_kernel(kc, ds.X);
  const spectral::SpectralOperator op = spectral::eigendecompose(bk.gram.H);
  const flow::FlowModel model =
      flow::build(op, bk.f0, ds.y, bk.gram.cross, bk.f0_fn);
  const reml::RemlFit fit = reml::solve_stopping_time(model.coeffs, op.eigenvalues);
  const flow::VarianceAllocation va =
      flow::variance_allocation(model, fit.t_hat, fit.sigma2_hat);

  nlohmann::json j;
  j["kind"] = "fit";
  j["n"] = ds.X.rows();
  j["d"] = ds.X.cols();
  j["kernel"] = kernel_json(kc);
  j["t_hat"] = fit.t_hat;
  j["sigma2_hat"] = fit.sigma2_hat;
  j["q_value"] = fit.q_value;
  j["edf"] = fit.edf;
  j["psi_value"] = fit.psi_value;
  j["status"] = reml::to_string(fit.status);
  j["condition_i"] = fit.condition_i;
  j["condition_ii"] = fit.condition_ii;
  j["iterations"] = fit.iterations;
  j["operator_rank"] = op.rank;
  j["eigenvalue_max"] = op.eigenvalues[0];
  j["eigenvalue_mean"] = op.mean_eigenvalue;
  j["explained_proportion"] = va.explained_proportion;
  harness::write_json_file(j, out_path);
  std::printf("fit: n=%lld t_hat=%.6g sigma2_hat=%.6g edf=%.6g status=%s -> %s\n",
              static_cast<long long>(ds.X.rows()), fit.t_hat, fit.sigma2_hat,
              fit.edf, reml::to_string(fit.status), out_path.c_str());
}

void run_score_test(const std::string& data_path, const KernelChoice& kc,
                    const std::string& out_path) {
  const io::Dataset ds = io::read_csv_data(data_path);
  const BuiltKernel bk = build_kernel(kc, ds.X);
  const vctest::ScoreTestResult st =
      vctest::score_test(ds.y, bk.f0, bk.gram.H, 1e-6);

  nlohmann::json j;
  j["kind"] = "score_test";
  j["n"] = ds.X.rows();
  j["d"] = ds.X.cols();
  j["kernel"] = kernel_json(kc);
  j["statistic"] = st.statistic;
  j["p_value"] = st.p_value;
  j["method"] = vctest::to_string(st.method);
  j["integration_error"] = st.integration_error;
  j["centered_fallback"] = st.centered_fallback;
  harness::write_json_file(j, out_path);
  std::printf("test: n=%lld statistic=%.6g p=%.6g method=%s -> %s\n",
              static_cast<long long>(ds.X.rows()), st.statistic, st.p_value,
              vctest::to_string(st.method), out_path.c_str());
}

void run_curves(const std::string& data_path, const KernelChoice& kc, double tmin,
                double tmax, int points, const std::string& out_path) {
  if (!(tmin > 0.0) || !(tmax >= tmin))
    throw InvalidArgument("curves: need 0 < tmin <= tmax");
  if (points < 2) throw InvalidArgument("curves: need at least 2 grid points");
  const io::Dataset ds = io::read_csv_data(data_path);
  const BuiltKernel bk = build_kernel(kc, ds.X);
  const spectral::SpectralOperator op = spectral::eigendecompose(bk.gram.H);
  const flow::FlowModel model =
      flow::build(op, bk.f0, ds.y, bk.gram.cross, bk.f0_fn);
  const reml::RemlFit fit = reml::solve_stopping_time(model.coeffs, op.eigenvalues);

  Eigen::VectorXd grid(points);
  const double l0 = std::log(tmin), l1 = std::log(tmax);
  for (int i = 0; i < points; ++i)
    grid[i] = std::exp(l0 + (l1 - l0) * i / static_cast<double>(points - 1));
  harness::emit_curves(model, fit, grid, out_path);
  std::printf("curves: %d points on [%.6g, %.6g], t_hat=%.6g -> %s (+ .json)\n",
              points, tmin, tmax, fit.t_hat, out_path.c_str());
}

void run_simulate(const std::string& config_path, const std::string& out_override) {
  const io::Config cfg = io::Config::load(config_path);
  cfg.require_known({"scenario", "n_grid", "d", "noise_sd", "width", "reps",
                     "alpha", "base_seed", "pvalue_tol", "out"});
  harness::TestExperimentConfig tc;
  tc.scenario = harness::parse_scenario(cfg.get_string("scenario", "test_null"));
  tc.n_grid = cfg.get_int_list("n_grid", tc.n_grid);
  tc.d = cfg.get_int("d", tc.d);
  tc.noise_sd = cfg.get_double("noise_sd", tc.noise_sd);
  tc.width = cfg.get_int("width", tc.width);
  tc.reps = cfg.get_int("reps", tc.reps);
  tc.alpha = cfg.get_double("alpha", tc.alpha);
  tc.base_seed = cfg.get_u64("base_seed", tc.base_seed);
  tc.pvalue_tol = cfg.get_double("pvalue_tol", tc.pvalue_tol);
  const std::string out = out_override.empty() ? cfg.get_string("out") : out_override;

  const harness::TestExperimentReport report = harness::run_test_experiment(tc);
  harness::write_json_file(harness::to_json(report), out);
  for (const harness::TestExperimentBlock& block : report.blocks)
    std::printf("simulate: n=%d reps=%d rejection_rate=%.4f (se=%.4f)\n",
                block.n_train, tc.reps, block.rejection_rate, block.rejection_se);
  std::printf("simulate: report -> %s\n", out.c_str());
}

void run_stop(const std::string& config_path, const std::string& out_override) {
  const io::Config cfg = io::Config::load(config_path);
  cfg.require_known({"scenario", "n_train", "n_test", "d", "noise_sd", "width",
                     "hidden_layers", "eta", "epochs", "reps", "base_seed",
                     "risk_grid_points", "out"});
  harness::EarlyStopConfig ec;
  ec.scenario = harness::parse_scenario(cfg.get_string("scenario", "case1"));
  ec.n_train = cfg.get_int("n_train", ec.n_train);
  ec.n_test = cfg.get_int("n_test", ec.n_test);
  ec.d = cfg.get_int("d", ec.d);
  ec.noise_sd = cfg.get_double("noise_sd", ec.noise_sd);
  ec.width = cfg.get_int("width", ec.width);
  ec.hidden_layers = cfg.get_int("hidden_layers", ec.hidden_layers);
  ec.eta = cfg.get_double("eta", ec.eta);
  ec.epochs = cfg.get_int("epochs", ec.epochs);
  ec.reps = cfg.get_int("reps", ec.reps);
  ec.base_seed = cfg.get_u64("base_seed", ec.base_seed);
  ec.risk_grid_points = cfg.get_int("risk_grid_points", ec.risk_grid_points);
  const std::string out = out_override.empty() ? cfg.get_string("out") : out_override;

  const harness::EarlyStopReport report = harness::run_earlystop_experiment(ec);
  harness::write_json_file(harness::to_json(report), out);
  std::printf("stop: reps=%d mean_risk_ratio=%.4f\n", ec.reps,
              report.mean_risk_ratio);
  if (ec.epochs > 0)
    std::printf("stop: mean test MSE  reml=%.6g  oracle=%.6g  validation=%.6g\n",
                report.mean_test_mse_reml, report.mean_test_mse_oracle,
                report.mean_test_mse_validation);
  std::printf("stop: report -> %s\n", out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gradient-flow early stopping and variance-component testing"};
  app.require_subcommand(1);

  KernelChoice kc;
  std::string data_path, out_path, config_path, out_override;
  double tmin = 1e-3, tmax = 1e3;
  int points = 100;

  CLI::App* fit = app.add_subcommand("fit", "REML stopping-time fit on a dataset");
  fit->add_option("--data", data_path, "CSV: header, features, response last")
      ->required();
  add_kernel_options(fit, kc);
  fit->add_option("--out", out_path, "output JSON path")->required();

  CLI::App* test = app.add_subcommand("test", "score test for training-induced signal");
  test->add_option("--data", data_path, "CSV: header, features, response last")
      ->required();
  add_kernel_options(test, kc);
  test->add_option("--out", out_path, "output JSON path")->required();

  CLI::App* curves = app.add_subcommand("curves", "diagnostic curves on a log grid");
  curves->add_option("--data", data_path, "CSV: header, features, response last")
      ->required();
  add_kernel_options(curves, kc);
  curves->add_option("--tmin", tmin, "grid start (default 1e-3)");
  curves->add_option("--tmax", tmax, "grid end (default 1e3)");
  curves->add_option("--points", points, "grid size (default 100)");
  curves->add_option("--out", out_path, "output CSV path")->required();

  CLI::App* simulate = app.add_subcommand("simulate", "score-test replication study");
  simulate->add_option("--config", config_path, "key = value config file")->required();
  simulate->add_option("--out", out_override, "override the config's out path");

  CLI::App* stop = app.add_subcommand("stop", "early-stopping replication study");
  stop->add_option("--config", config_path, "key = value config file")->required();
  stop->add_option("--out", out_override, "override the config's out path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit->parsed()) run_fit(data_path, kc, out_path);
    if (test->parsed()) run_score_test(data_path, kc, out_path);
    if (curves->parsed()) run_curves(data_path, kc, tmin, tmax, points, out_path);
    if (simulate->parsed()) run_simulate(config_path, out_override);
    if (stop->parsed()) run_stop(config_path, out_override);
    return 0;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::invalid_input ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
}
