#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfml/flow.hpp"

namespace sfml {

struct TrainConfig {
  std::int64_t epochs = 1;
  std::int64_t batch_size = 1000;

  // Cyclic learning rate: triangular wave between base and max with
  // half-cycle `step_size_iters`, globally damped by gamma^iteration; the
  // triangle amplitude halves every `cycle_epochs` epochs.
  double base_rate = 3e-4;
  double max_rate = 5e-4;
  double gamma = 0.99999;
  std::int64_t step_size_iters = 10000;
  std::int64_t cycle_epochs = 40000;
  double cycle_decay = 0.5;

  double weight_decay = 0.01;  // decoupled, weights only
  std::uint64_t seed = 0;

  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  /// Adds centered uniform noise U(-1/2, 1/2) to integer-valued state
  /// coordinates (contexts and targets) so count data has a density.
  bool dequantize = false;

  std::int64_t checkpoint_interval = 0;  // epochs; 0 = only at the end
  std::string checkpoint_path;
  int threads = 1;  // 0 = hardware concurrency

  /// Progress hook, called after every epoch (not serialized).
  std::function<void(const struct EpochStats&)> on_epoch;

  void validate() const;
};

struct EpochStats {
  std::int64_t epoch = 0;
  double mean_nll = 0.0;
  double lr = 0.0;
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
};

/// Learning rate at (iteration, epoch) under the cyclic schedule.
double lr_schedule(const TrainConfig& cfg, std::int64_t iteration,
                   std::int64_t epoch = 0);

/// Mean over the batch of -log p(x1 | x0, gamma). Throws TrainingError naming
/// the first offending record if any log-density is non-finite.
double nll_loss(const FlowModel& flow, const std::vector<SnapshotPair>& batch);

/// Optimizer state carried across checkpoint/resume.
struct TrainerState {
  Eigen::VectorXd weights;  // current (not best) weights
  Eigen::VectorXd adam_m;
  Eigen::VectorXd adam_v;
  Eigen::VectorXd best_weights;
  double best_nll = 0.0;
  std::int64_t iteration = 0;
  std::int64_t epoch = 0;
  TrainHistory history;
};

struct TrainResult {
  FlowModel model;  // best-NLL weights
  TrainHistory history;
  TrainerState state;  // end-of-run state (current weights)
};

/// Adam with decoupled weight decay on the mean-NLL loss. Shuffle order,
/// batch composition and dequantization draws are derived per epoch from the
/// seed, so a fixed seed gives identical weights whatever the thread count,
/// and resuming from an epoch checkpoint matches the uninterrupted run.
TrainResult train(FlowModel flow, const TrainingSet& set, const TrainConfig& cfg);

/// Continues a checkpointed run up to cfg.epochs total epochs.
TrainResult resume(const std::string& checkpoint_path, const TrainingSet& set,
                   const TrainConfig& cfg);

/// Writes flow + optimizer state + history (the trainer section of the
/// checkpoint format described in flow.hpp).
void save_checkpoint(const FlowModel& flow, const TrainerState& state,
                     const std::string& path);
/// Loads both; returns false in `had_state` via optional when absent.
std::pair<FlowModel, std::optional<TrainerState>> load_checkpoint(
    const std::string& path);

void save_history_text(const TrainHistory& history, const std::string& path);

}  // namespace sfml
