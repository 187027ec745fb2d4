#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "sfml/predict.hpp"

using namespace sfml;

namespace {

FlowModel tiny_ou_flow(std::uint64_t seed = 1) {
  FlowModel flow = build_flow_raw(1, 3, FlowConfig{}, seed);
  flow.meta.basis = BasisSpec::monomial(3, 0.01);
  flow.meta.n_u = 1;
  flow.meta.delta = 0.01;
  flow.meta.x_domain = Box::cube(1, -2.0, 2.0);
  flow.meta.system_name = "ou_drift";
  return flow;
}

StepModel gaussian_step(double mean, double std) {
  StepModel m;
  m.d = 1;
  m.delta = 0.1;
  m.basis = BasisSpec::piecewise_constant(0.1);
  m.n_u = 1;
  m.step = [mean, std](const Eigen::VectorXd&, const LocalExcitationParams&, Rng& rng) {
    return Eigen::VectorXd::Constant(1, mean + std * rng.normal());
  };
  return m;
}

}  // namespace

TEST_CASE("a one-step rollout reduces to sample()") {
  const FlowModel flow = tiny_ou_flow();
  const StepModel model = as_step_model(flow);
  const auto u = ExcitationSignal::from_expressions({"0.5*sin(6*t)"});
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 1.2);

  Rng r1(404);
  const RolloutResult roll = rollout(model, x0, u, 1, r1);

  const auto params = parameterize_signal(u, flow.meta.basis, 1, 1);
  Rng r2(404);
  const Eigen::MatrixXd s = sample(flow, x0, params[0].flat(), 1, r2);
  CHECK(roll.states(1, 0) == s(0, 0));
  CHECK(roll.states(0, 0) == 1.2);

  Rng r3(404);
  const RolloutResult again = rollout(model, x0, u, 1, r3);
  CHECK(again.states == roll.states);
}

TEST_CASE("parameterization mirrors the training basis") {
  // sampled signal + piecewise-linear basis: exact endpoint interpolation
  Eigen::VectorXd grid(3);
  grid << 0.0, 0.01, 0.02;
  Eigen::MatrixXd values(1, 3);
  values << 1.0, 2.0, 1.5;
  const auto sig = ExcitationSignal::sampled(grid, values);
  const auto pwl = parameterize_signal(sig, BasisSpec::piecewise_linear(0.01), 1, 2);
  CHECK(pwl[0].coeffs(0, 0) == 1.0);
  CHECK(pwl[0].coeffs(0, 1) == doctest::Approx(100.0));
  CHECK(pwl[1].coeffs(0, 0) == 2.0);

  // sampled signal + monomial training basis: fit through the interpolant
  const auto mono = parameterize_signal(sig, BasisSpec::monomial(3, 0.01), 1, 2);
  CHECK(mono[0].coeffs(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(mono[0].coeffs(0, 1) == doctest::Approx(100.0).epsilon(1e-6));
  // a quadratic fit of a linear segment has a negligible curvature term
  CHECK(std::abs(mono[0].coeffs(0, 2)) < 1e-3);

  // analytic signal + piecewise-constant basis (the resonance setup)
  const auto zero = ExcitationSignal::from_expressions({"0"});
  const auto pc = parameterize_signal(zero, BasisSpec::piecewise_constant(0.01), 1, 3);
  CHECK(pc[2].coeffs(0, 0) == 0.0);

  // channel mismatch is an error
  CHECK_THROWS_AS(parameterize_signal(sig, BasisSpec::monomial(3, 0.01), 2, 1),
                  PredictError);
}

TEST_CASE("ensemble basics") {
  const StepModel model = gaussian_step(3.0, 2.0);
  const auto u = ExcitationSignal::constant(Eigen::VectorXd::Zero(1));
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, -1.0);

  // N_ens = 1 equals a rollout seeded with substream 0
  const TrajectoryEnsemble one = ensemble(model, x0, u, 5, 1, 31);
  Rng rr = Rng::stream(31, 0);
  const RolloutResult roll = rollout(model, x0, u, 5, rr);
  CHECK(one.states.row(0).transpose() ==
        Eigen::Map<const Eigen::VectorXd>(roll.states.data(), roll.states.size()));

  const TrajectoryEnsemble ens = ensemble(model, x0, u, 4, 3000, 17, 2);
  // first slice is the broadcast initial condition
  CHECK(ens.slice(0).col(0).minCoeff() == -1.0);
  CHECK(ens.slice(0).col(0).maxCoeff() == -1.0);

  const MomentCurvesNd mom = moments(ens);
  CHECK(mom.t[2] == doctest::Approx(0.2));
  for (int s = 1; s <= 4; ++s) {
    CHECK(mom.mean(s, 0) == doctest::Approx(3.0).epsilon(0.05));
    CHECK(mom.stddev(s, 0) == doctest::Approx(2.0).epsilon(0.05));
  }

  // identical bytes regardless of the thread count
  const TrajectoryEnsemble ens1 = ensemble(model, x0, u, 4, 3000, 17, 1);
  CHECK(ens1.states == ens.states);
}

TEST_CASE("moments formulas") {
  TrajectoryEnsemble ens;
  ens.n_ens = 2;
  ens.n_steps = 1;
  ens.d = 1;
  ens.delta = 0.5;
  ens.states.resize(2, 2);
  ens.states << 1.0, 5.0,
                1.0, 2.0;
  const MomentCurvesNd mom = moments(ens);
  CHECK(mom.mean(1, 0) == doctest::Approx(3.5));
  CHECK(mom.stddev(1, 0) == doctest::Approx(std::abs(5.0 - 2.0) / std::sqrt(2.0)));
  CHECK(mom.stddev(0, 0) == 0.0);  // constant slice

  TrajectoryEnsemble single = ens;
  single.n_ens = 1;
  single.states = ens.states.topRows(1);
  CHECK(moments(single).stddev(1, 0) == 0.0);
}

TEST_CASE("snapshot distances") {
  auto fill = [](int n, double shift, std::uint64_t seed) {
    TrajectoryEnsemble e;
    e.n_ens = n;
    e.n_steps = 1;
    e.d = 1;
    e.delta = 1.0;
    e.states.resize(n, 2);
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
      e.states(i, 0) = 0.0;
      e.states(i, 1) = shift + rng.normal();
    }
    return e;
  };

  const int n = 100000;
  const auto a = fill(n, 0.0, 1);
  // identical ensembles -> exactly zero
  auto [w0, k0] = snapshot_distance(a, a, 1.0);
  CHECK(w0[0] == 0.0);
  CHECK(k0[0] == 0.0);

  // translation by one
  const auto b = fill(n, 1.0, 2);
  auto [w1, k1] = snapshot_distance(a, b, 1.0);
  CHECK(w1[0] == doctest::Approx(1.0).epsilon(0.02));

  // two independent standard normal ensembles stay below the KS critical value
  const auto c = fill(n, 0.0, 3);
  auto [w2, k2] = snapshot_distance(a, c, 1.0);
  CHECK(k2[0] < 1.63 * std::sqrt(2.0 / n));

  CHECK_THROWS_AS(snapshot_distance(a, fill(10, 0, 4), 1.0), PredictError);
  CHECK_THROWS_AS(snapshot_distance(a, b, 0.37), PredictError);
}

TEST_CASE("time-homogeneity of one-step sampling under constant excitation") {
  const auto sys = builtin_system("ou_drift");
  const StepModel oracle = as_step_model(sys);
  const auto u = ExcitationSignal::constant(Eigen::VectorXd::Constant(1, 0.5));
  const Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 0.8);

  const int n = 4000;
  // law of x1 | x0 = a at step 0
  const TrajectoryEnsemble direct = ensemble(oracle, a, u, 1, n, 100);
  // law of x_{k+1} | x_k = a sampled mid-trajectory (burn rng on k steps first)
  TrajectoryEnsemble mid = direct;
  for (int member = 0; member < n; ++member) {
    Rng rng = Rng::stream(200, static_cast<std::uint64_t>(member));
    Eigen::VectorXd x = a;
    for (int burn = 0; burn < 7; ++burn) x = oracle.step(x, parameterize_signal(u, sys.basis, 1, 1)[0], rng);
    x = oracle.step(a, parameterize_signal(u, sys.basis, 1, 1)[0], rng);
    mid.states(member, 1) = x[0];
  }
  auto [w, k] = snapshot_distance(direct, mid, sys.delta);
  CHECK(k[0] < 1.63 * std::sqrt(2.0 / n));
}

TEST_CASE("truth ensembles converge to the moment oracle") {
  const auto sys = builtin_system("ou_drift");
  const auto u = ExcitationSignal::from_expressions({"0.5*sin(6*t)"});
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 2.0);
  const int n_steps = 100;

  Eigen::VectorXd grid(n_steps);
  for (int i = 0; i < n_steps; ++i) grid[i] = 0.01 * (i + 1);
  const MomentCurves oracle = ou_moment_oracle(1.0, 0.2, u, 2.0, grid);

  // mean absolute error across the time grid; a concentrated statistic that
  // tracks the 1/sqrt(N) Monte Carlo rate
  auto mean_err = [&](int n_ens, std::uint64_t seed) {
    const TrajectoryEnsemble ens =
        truth_ensemble(sys, x0, u, n_steps, n_ens, seed, /*n_sub=*/16, 2);
    const MomentCurvesNd mom = moments(ens);
    double err = 0.0;
    for (int s = 1; s <= n_steps; ++s) {
      err += std::abs(mom.mean(s, 0) - oracle.mean[s - 1]);
    }
    return err / n_steps;
  };

  const double e100 = mean_err(100, 1);
  const double e1600 = mean_err(1600, 2);
  const double e25600 = mean_err(25600, 3);
  // each 16x size step should shrink the error by about 4x; require 2x
  CHECK(e1600 < e100 * 0.5);
  CHECK(e25600 < e1600 * 0.5);
}

TEST_CASE("validate flags bad models and passes the oracle wrapper") {
  const auto sys = builtin_system("ou_drift");
  Scenario scenario;
  scenario.x0 = Eigen::VectorXd::Constant(1, 1.0);
  scenario.u = ExcitationSignal::from_expressions({"0.3*sin(3*t)"});
  scenario.T = 1.0;
  scenario.n_ens = 2000;

  // the truth sampler wrapped as a model validates against itself
  const StepModel oracle = as_step_model(sys);
  const ValidationReport self =
      validate(oracle, sys, scenario, {0.5, 1.0}, 42, 2);
  ValidationThresholds thr;
  thr.mean_abs_max = 0.02;
  thr.std_abs_max = 0.02;
  thr.w1_max = 0.02;
  thr.ks_max = 0.08;
  CHECK(self.within(thr));
  CHECK(self.guard_violations == 0);

  // an untrained identity flow predicts standardized noise and must fail
  const FlowModel identity = tiny_ou_flow();
  Scenario longer = scenario;
  longer.T = 4.0;
  const ValidationReport bad =
      validate(as_step_model(identity), sys, longer, {4.0}, 43, 2);
  CHECK(bad.snapshots[0].w1[0] > 0.1);
  ValidationThresholds w_only;
  w_only.w1_max = 0.1;
  CHECK_FALSE(bad.within(w_only));
}

TEST_CASE("guard box violations warn but do not abort") {
  StepModel walker = gaussian_step(0.0, 1.0);
  walker.step = [](const Eigen::VectorXd& x, const LocalExcitationParams&, Rng&) {
    return Eigen::VectorXd::Constant(1, x[0] + 1.0);  // marches out of any box
  };
  walker.guard = Box::cube(1, -2.0, 2.0);
  const auto u = ExcitationSignal::constant(Eigen::VectorXd::Zero(1));
  Rng rng(1);
  const RolloutResult res = rollout(walker, Eigen::VectorXd::Zero(1), u, 10, rng);
  CHECK(res.guard_violations == 8);  // steps 3..10 sit outside [-2, 2]
  CHECK(res.first_violation_step == 3);
  CHECK(res.states(10, 0) == 10.0);
}

TEST_CASE("ensemble files round-trip") {
  const StepModel model = gaussian_step(1.0, 0.5);
  const auto u = ExcitationSignal::constant(Eigen::VectorXd::Zero(1));
  const TrajectoryEnsemble ens =
      ensemble(model, Eigen::VectorXd::Zero(1), u, 6, 40, 9);
  namespace fs = std::filesystem;
  const auto path = (fs::temp_directory_path() / "sfml_ens.bin").string();
  save_ensemble(ens, path);
  const TrajectoryEnsemble back = load_ensemble(path);
  CHECK(back.states == ens.states);
  CHECK(back.delta == ens.delta);
  CHECK(back.n_steps == ens.n_steps);
}

TEST_CASE("histogram bins cover the samples") {
  Rng rng(8);
  Eigen::VectorXd s(5000);
  for (int i = 0; i < 5000; ++i) s[i] = rng.normal();
  const Histogram h = histogram_fd(s);
  CHECK(h.counts.sum() == doctest::Approx(5000.0));
  CHECK(h.edges[0] == doctest::Approx(s.minCoeff()));
  CHECK(h.edges[h.edges.size() - 1] == doctest::Approx(s.maxCoeff()));
  CHECK(h.counts.size() > 10);
}
