#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfml/flow.hpp"
#include "sfml/systems.hpp"

namespace sfml {

/// Ensemble of trajectories on the uniform grid t_n = n * delta. Rows of
/// `states` are members; each row stores steps contiguously, d values per step.
struct TrajectoryEnsemble {
  int n_ens = 0;
  int n_steps = 0;
  int d = 0;
  double delta = 0.0;
  Eigen::MatrixXd states;  // n_ens x ((n_steps+1) * d)

  Eigen::MatrixXd slice(int step) const;  // n_ens x d
  double time_of(int step) const { return step * delta; }
  int step_of(double t) const;  // nearest grid index; throws off-grid
};

/// Anything that advances a state one step given local excitation parameters:
/// the learned flow, or a ground-truth simulator wrapped as an oracle.
struct StepModel {
  int d = 0;
  double delta = 0.0;
  BasisSpec basis;
  int n_u = 0;
  std::optional<Box> guard;  // extrapolation warning box
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const LocalExcitationParams&, Rng&)> step;
};

/// Learned model as a StepModel; the guard box defaults to the training
/// x-domain scaled by `guard_factor`.
StepModel as_step_model(const FlowModel& flow, double guard_factor = 1.5);
/// Truth simulator as a StepModel (the "oracle flow" used for self-tests).
StepModel as_step_model(const BuiltinSystem& system, int n_sub = 1);

/// Per-step excitation parameters for u on [0, n_steps * delta), mirroring
/// the training basis: sampled signals with a piecewise-linear basis use the
/// two endpoint values; everything else is least-squares fit per step.
std::vector<LocalExcitationParams> parameterize_signal(const ExcitationSignal& u,
                                                       const BasisSpec& basis,
                                                       int n_u, int n_steps);

struct RolloutResult {
  Eigen::MatrixXd states;  // (n_steps+1) x d
  int guard_violations = 0;
  int first_violation_step = -1;
};

RolloutResult rollout(const StepModel& model, const Eigen::VectorXd& x0,
                      const ExcitationSignal& u, int n_steps, Rng& rng);

/// N_ens independent rollouts; member j uses rng substream j of `seed`, so
/// the ensemble bytes are identical for any thread count.
TrajectoryEnsemble ensemble(const StepModel& model, const Eigen::VectorXd& x0,
                            const ExcitationSignal& u, int n_steps, int n_ens,
                            std::uint64_t seed, int threads = 1,
                            int* guard_violations = nullptr);

/// Reference ensemble driven by the raw signal (not its parameterization).
TrajectoryEnsemble truth_ensemble(const BuiltinSystem& system, const Eigen::VectorXd& x0,
                                  const ExcitationSignal& u, int n_steps, int n_ens,
                                  std::uint64_t seed, int n_sub = 1, int threads = 1);

struct MomentCurvesNd {
  Eigen::VectorXd t;
  Eigen::MatrixXd mean;    // (n_steps+1) x d
  Eigen::MatrixXd stddev;  // unbiased sample std
};

MomentCurvesNd moments(const TrajectoryEnsemble& ens);

/// Per-coordinate (Wasserstein-1, two-sample KS) between the ensembles'
/// states at time t. Requires equal member counts.
std::pair<Eigen::VectorXd, Eigen::VectorXd> snapshot_distance(
    const TrajectoryEnsemble& a, const TrajectoryEnsemble& b, double t);

struct Scenario {
  Eigen::VectorXd x0;
  ExcitationSignal u;
  double T = 0.0;
  int n_ens = 0;
};

struct ValidationThresholds {
  std::optional<double> mean_abs_max;
  std::optional<double> std_abs_max;
  std::optional<double> w1_max;
  std::optional<double> ks_max;
};

struct ValidationReport {
  Eigen::VectorXd t;
  Eigen::MatrixXd model_mean, model_std, ref_mean, ref_std;
  struct Snapshot {
    double t = 0.0;
    Eigen::VectorXd w1, ks;
  };
  std::vector<Snapshot> snapshots;
  Eigen::VectorXd mean_abs_err_max;  // per coordinate, max over time
  Eigen::VectorXd std_abs_err_max;
  int guard_violations = 0;

  bool within(const ValidationThresholds& thr) const;
};

/// Runs matched model and truth ensembles under the scenario and compares
/// moments plus snapshot distributions.
ValidationReport validate(const StepModel& model, const BuiltinSystem& truth,
                          const Scenario& scenario,
                          const std::vector<double>& snapshot_times,
                          std::uint64_t seed, int threads = 1, int truth_n_sub = 1);

/// Ensemble file: magic "SFME" | u32 version=1 | u32 d | u64 n_ens |
/// u64 n_steps | f64 delta | f64 states (member-major).
void save_ensemble(const TrajectoryEnsemble& ens, const std::string& path);
TrajectoryEnsemble load_ensemble(const std::string& path);

void save_report_text(const ValidationReport& report, const std::string& path);

/// Freedman-Diaconis histogram of one coordinate's samples (plot data).
struct Histogram {
  Eigen::VectorXd edges;   // size bins+1
  Eigen::VectorXd counts;  // size bins
};
Histogram histogram_fd(const Eigen::VectorXd& samples);

}  // namespace sfml
