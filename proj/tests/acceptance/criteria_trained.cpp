#include "criteria.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>

#include "sfml/predict.hpp"
#include "sfml/training.hpp"

namespace acceptance {

using namespace sfml;

namespace {

double now_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double two_sample_ks(Eigen::VectorXd a, Eigen::VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  Eigen::Index i = 0, j = 0;
  double ks = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    ks = std::max(ks, std::abs(static_cast<double>(i) / a.size() -
                               static_cast<double>(j) / b.size()));
  }
  return ks;
}

TrainConfig desk_config(std::int64_t epochs, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 1000;
  cfg.seed = seed;
  cfg.threads = 0;  // all cores
  return cfg;
}

}  // namespace

// A1: scaled OU drift-control study. Train on M=20,000 one-step pairs, then
// predict x0 = 2, alpha(t) = 0.5 sin(6t) for T = 5 with a 4,000-member
// ensemble and compare against the exact moment oracle and a matched
// reference ensemble.
bool a1_ou_drift() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker check("A1 OU drift control (scaled)");

  const auto sys = builtin_system("ou_drift");
  const TrainingSet set = generate_training_set(sys, 20000, 20250101, 0);
  FlowModel flow = build_flow(set, FlowConfig{}, 17);
  const TrainResult trained = train(std::move(flow), set, desk_config(2000, 99));
  std::cout << "  [A1] trained " << trained.state.iteration << " iterations, final nll "
            << trained.history.epochs.back().mean_nll << "\n";

  const auto u = ExcitationSignal::from_expressions({"0.5*sin(6*t)"});
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 2.0);
  const int n_steps = 500;  // T = 5
  const int n_ens = 4000;

  const StepModel model = as_step_model(trained.model);
  int violations = 0;
  const TrajectoryEnsemble model_ens =
      ensemble(model, x0, u, n_steps, n_ens, 424242, 0, &violations);
  const TrajectoryEnsemble ref_ens = truth_ensemble(sys, x0, u, n_steps, n_ens, 515151, 1, 0);

  Eigen::VectorXd grid(n_steps);
  for (int i = 0; i < n_steps; ++i) grid[i] = sys.delta * (i + 1);
  const MomentCurves oracle = ou_moment_oracle(1.0, 0.2, u, 2.0, grid);
  const MomentCurvesNd mm = moments(model_ens);

  double mean_err = 0.0, std_err = 0.0;
  for (int s = 1; s <= n_steps; ++s) {
    mean_err = std::max(mean_err, std::abs(mm.mean(s, 0) - oracle.mean[s - 1]));
    std_err = std::max(std_err,
                       std::abs(mm.stddev(s, 0) - std::sqrt(oracle.variance[s - 1])));
  }
  check.leq("max_mean_err", mean_err, 0.06);
  check.leq("max_std_err", std_err, 0.04);
  for (double t : {2.0, 4.0}) {
    const auto [w1, ks] = snapshot_distance(model_ens, ref_ens, t);
    check.leq("W1(t=" + std::to_string(t).substr(0, 3) + ")", w1[0], 0.05);
  }
  std::cout << "  [A1] guard violations: " << violations << " of " << n_ens << "\n";
  return check.finish(now_seconds(t0));
}

// A2: conditional-law recovery on the linear-Gaussian synthetic task
// x1 = 0.8 x0 + gamma + 0.1 z.
bool a2_linear_gaussian() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker check("A2 linear-Gaussian conditional law");

  TrainingSet set;
  set.meta.d = 1;
  set.meta.n_u = 1;
  set.meta.basis = BasisSpec::piecewise_constant(0.1);
  set.meta.n_gamma = 1;
  set.meta.delta = 0.1;
  set.meta.M = 20000;
  set.meta.system_name = "linear_gaussian";
  set.meta.seed = 4;
  set.meta.x_domain = Box::cube(1, -1.0, 1.0);
  set.meta.gamma_domain = Box::cube(1, -1.0, 1.0);
  set.records.resize(20000);
  for (int j = 0; j < 20000; ++j) {
    Rng rng = Rng::stream(4, static_cast<std::uint64_t>(j));
    auto& rec = set.records[static_cast<std::size_t>(j)];
    rec.x0 = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
    rec.gamma = Eigen::VectorXd::Constant(1, rng.uniform(-1, 1));
    rec.x1 =
        Eigen::VectorXd::Constant(1, 0.8 * rec.x0[0] + rec.gamma[0] + 0.1 * rng.normal());
  }

  FlowModel flow = build_flow(set, FlowConfig{}, 23);
  const TrainResult trained = train(std::move(flow), set, desk_config(5000, 555));
  std::cout << "  [A2] trained " << trained.state.iteration << " iterations, final nll "
            << trained.history.epochs.back().mean_nll << "\n";

  // 20 probe points on a 5x4 grid inside the sampling box
  double worst_mean = 0.0, worst_std = 0.0;
  Rng rng(9001);
  for (int a = 0; a < 5; ++a) {
    for (int b = 0; b < 4; ++b) {
      const double x0v = -0.8 + 0.4 * a;
      const double gv = -0.75 + 0.5 * b;
      const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, x0v);
      const Eigen::VectorXd gamma = Eigen::VectorXd::Constant(1, gv);
      const Eigen::MatrixXd s = sample(trained.model, x0, gamma, 4000, rng);
      const double mean = s.col(0).mean();
      const double sd = std::sqrt((s.col(0).array() - mean).square().sum() / (s.rows() - 1.0));
      worst_mean = std::max(worst_mean, std::abs(mean - (0.8 * x0v + gv)));
      worst_std = std::max(worst_std, std::abs(sd - 0.1));
    }
  }
  check.leq("cond_mean_err", worst_mean, 0.02);
  check.leq("cond_std_err", worst_std, 0.015);

  // KS of model samples against the exact Gaussian conditional at one probe
  const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(1, 0.5);
  const Eigen::VectorXd gamma = Eigen::VectorXd::Constant(1, -0.25);
  const int n = 10000;
  Eigen::MatrixXd s = sample(trained.model, x0, gamma, n, rng);
  Eigen::VectorXd sorted = s.col(0);
  std::sort(sorted.data(), sorted.data() + n);
  const double m_exact = 0.8 * 0.5 - 0.25;
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = 0.5 * std::erfc(-(sorted[i] - m_exact) / (0.1 * std::sqrt(2.0)));
    ks = std::max(ks, std::abs(cdf - (i + 1.0) / n));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
  }
  check.leq("cond_ks", ks, 0.05);
  return check.finish(now_seconds(t0));
}

// A5: non-Gaussian one-step law of the gene-expression network at the fixed
// probe (x0, Gamma0) = ((2,133), (30, -4.535, -0.335)). Model samples are
// rounded back to counts before the per-coordinate KS comparison.
bool a5_gene_expression() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker check("A5 gene-expression one-step law (scaled)");

  const auto sys = builtin_system("gene_expression");
  const TrainingSet set = generate_training_set(sys, 30000, 777, 0);
  TrainConfig cfg = desk_config(2000, 31337);
  cfg.dequantize = true;
  FlowModel flow = build_flow(set, FlowConfig{}, 41);
  const TrainResult trained = train(std::move(flow), set, cfg);
  std::cout << "  [A5] trained " << trained.state.iteration << " iterations, final nll "
            << trained.history.epochs.back().mean_nll << "\n";

  Eigen::VectorXd x0(2);
  x0 << 2.0, 133.0;
  Eigen::VectorXd gamma(3);
  gamma << 30.0, -4.535, -0.335;
  const auto params = LocalExcitationParams::from_flat(gamma, 1, sys.basis);

  const int n = 10000;
  Rng model_rng(6061);
  const Eigen::MatrixXd model_samples = sample(trained.model, x0, gamma, n, model_rng);
  Eigen::MatrixXd ref_samples(n, 2);
  for (int r = 0; r < n; ++r) {
    Rng rng = Rng::stream(7072, static_cast<std::uint64_t>(r));
    ref_samples.row(r) =
        mnrm_simulate(*sys.reaction, x0.cast<int>(), params, sys.delta, rng)
            .cast<double>()
            .transpose();
  }
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd rounded = model_samples.col(j).array().round();
    check.leq(std::string("ks_") + (j == 0 ? "mrna" : "protein"),
              two_sample_ks(rounded, ref_samples.col(j)), 0.08);
  }
  return check.finish(now_seconds(t0));
}

// A6: qualitative double-well behaviour. Train on piecewise-constant
// excitations, roll out with u = 0 for T = 500 and look for metastable
// transitions plus a bimodal stationary marginal. Trajectories start on the
// ridge at x = 0 so both wells get populated.
bool a6_double_well() {
  const auto t0 = std::chrono::steady_clock::now();
  Checker check("A6 double-well qualitative (scaled)");

  const auto sys = builtin_system("double_well");
  const TrainingSet set = generate_training_set(sys, 15000, 88, 0);
  FlowModel flow = build_flow(set, FlowConfig{}, 29);
  const TrainResult trained = train(std::move(flow), set, desk_config(1500, 606));
  std::cout << "  [A6] trained " << trained.state.iteration << " iterations, final nll "
            << trained.history.epochs.back().mean_nll << "\n";

  const StepModel model = as_step_model(trained.model, /*guard_factor=*/3.0);
  const auto u = ExcitationSignal::constant(Eigen::VectorXd::Zero(1));
  const int n_steps = 50000;  // T = 500 at delta = 0.01
  const int n_traj = 20;

  int trajectories_with_transition = 0;
  std::vector<double> pooled;
  pooled.reserve(static_cast<std::size_t>(n_traj) * (n_steps / 10));
  for (int k = 0; k < n_traj; ++k) {
    Rng rng = Rng::stream(123456, static_cast<std::uint64_t>(k));
    const RolloutResult res = rollout(model, Eigen::VectorXd::Zero(1), u, n_steps, rng);
    int side = 0;  // +-1 once the trajectory has visited a well
    bool transition = false;
    for (int s = 1; s <= n_steps; ++s) {
      const double x = res.states(s, 0);
      if (x >= 1.0) {
        if (side == -1) transition = true;
        side = 1;
      } else if (x <= -1.0) {
        if (side == 1) transition = true;
        side = -1;
      }
      if (s > 2000 && s % 10 == 0) pooled.push_back(x);  // post burn-in marginal
    }
    if (transition) ++trajectories_with_transition;
  }
  check.geq("trajectories_with_transition", trajectories_with_transition, 3);

  // bimodality: the marginal's modes sit near +-1 and the ridge is a valley
  const double bin_w = 0.05;
  const int n_bins = static_cast<int>(4.0 / bin_w);
  Eigen::VectorXd hist = Eigen::VectorXd::Zero(n_bins);
  for (double x : pooled) {
    const int b = std::clamp(static_cast<int>((x + 2.0) / bin_w), 0, n_bins - 1);
    hist[b] += 1.0;
  }
  auto bin_center = [&](int b) { return -2.0 + bin_w * (b + 0.5); };
  const int ridge = static_cast<int>(2.0 / bin_w);
  int peak_neg = 0, peak_pos = ridge;
  for (int b = 0; b < n_bins; ++b) {
    if (bin_center(b) < 0.0 && hist[b] > hist[peak_neg]) peak_neg = b;
    if (bin_center(b) >= 0.0 && hist[b] > hist[peak_pos]) peak_pos = b;
  }
  check.leq("neg_mode_offset", std::abs(bin_center(peak_neg) + 1.0), 0.2);
  check.leq("pos_mode_offset", std::abs(bin_center(peak_pos) - 1.0), 0.2);
  check.require("valley between the wells",
                hist[ridge] < 0.6 * std::min(hist[peak_neg], hist[peak_pos]));
  std::cout << "  [A6] transitions in " << trajectories_with_transition << "/20, modes at "
            << bin_center(peak_neg) << " and " << bin_center(peak_pos) << "\n";
  return check.finish(now_seconds(t0));
}

}  // namespace acceptance
