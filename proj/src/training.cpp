#include "sfml/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "sfml/detail/binio.hpp"

namespace sfml {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(base_rate > 0.0) || !(max_rate > 0.0)) throw ConfigError("learning rates must be positive");
  if (base_rate > max_rate) throw ConfigError("base rate exceeds max rate");
  if (!(gamma > 0.0) || gamma > 1.0) throw ConfigError("gamma must be in (0, 1]");
  if (step_size_iters < 1) throw ConfigError("step size must be >= 1 iteration");
  if (cycle_epochs < 1) throw ConfigError("cycle period must be >= 1 epoch");
  if (weight_decay < 0.0) throw ConfigError("weight decay must be >= 0");
}

double lr_schedule(const TrainConfig& cfg, std::int64_t iteration, std::int64_t epoch) {
  if (iteration < 0 || epoch < 0) throw ConfigError("schedule expects nonnegative indices");
  const auto step = static_cast<double>(cfg.step_size_iters);
  const auto phase = static_cast<double>(iteration % (2 * cfg.step_size_iters));
  const double tri = 1.0 - std::abs(phase / step - 1.0);
  const auto cycle = epoch / cfg.cycle_epochs;
  const double amplitude = std::pow(cfg.cycle_decay, static_cast<double>(cycle));
  const double rate = cfg.base_rate + (cfg.max_rate - cfg.base_rate) * tri * amplitude;
  return rate * std::pow(cfg.gamma, static_cast<double>(iteration));
}

double nll_loss(const FlowModel& flow, const std::vector<SnapshotPair>& batch) {
  if (batch.empty()) throw TrainingError("nll_loss on an empty batch");
  Eigen::MatrixXd ctx(batch.size(), flow.ctx_dim());
  Eigen::MatrixXd x1(batch.size(), flow.d);
  for (std::size_t r = 0; r < batch.size(); ++r) {
    ctx.row(r) << batch[r].x0.transpose(), batch[r].gamma.transpose();
    x1.row(r) = batch[r].x1.transpose();
  }
  const Eigen::VectorXd lp = log_prob_batch(flow, ctx, x1);
  for (Eigen::Index r = 0; r < lp.size(); ++r) {
    if (!std::isfinite(lp[r])) {
      throw TrainingError("non-finite log-likelihood at batch record " +
                          std::to_string(r));
    }
  }
  return -lp.mean();
}

namespace {

struct BatchBuffers {
  Eigen::MatrixXd ctx;  // B x (d + n_gamma), raw units
  Eigen::MatrixXd x1;   // B x d
};

// Gathers one mini-batch. Dequantization noise is drawn from `epoch_rng` in
// record order (x0 coordinates then x1 coordinates) so the draw sequence is
// part of the epoch's deterministic stream.
void gather_batch(const TrainingSet& set, const std::vector<std::uint64_t>& order,
                  std::int64_t begin, std::int64_t end, bool dequantize,
                  Rng& epoch_rng, BatchBuffers& buf) {
  const int d = set.meta.d;
  const auto B = end - begin;
  buf.ctx.resize(B, d + set.meta.n_gamma);
  buf.x1.resize(B, d);
  for (std::int64_t r = 0; r < B; ++r) {
    const SnapshotPair& rec = set.records[order[static_cast<std::size_t>(begin + r)]];
    buf.ctx.row(r).head(d) = rec.x0;
    buf.ctx.row(r).tail(set.meta.n_gamma) = rec.gamma;
    buf.x1.row(r) = rec.x1;
    if (dequantize) {
      for (int i = 0; i < d; ++i) buf.ctx(r, i) += epoch_rng.uniform(-0.5, 0.5);
      for (int i = 0; i < d; ++i) buf.x1(r, i) += epoch_rng.uniform(-0.5, 0.5);
    }
  }
}

void shuffle_order(std::vector<std::uint64_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(order[i - 1], order[j]);
  }
}

}  // namespace

TrainResult train_loop(FlowModel flow, const TrainingSet& set, const TrainConfig& cfg,
                       TrainerState state) {
  cfg.validate();
  set.meta.validate();
  if (set.meta.d != flow.d || set.meta.n_gamma != flow.n_gamma) {
    throw ConfigError("training set dimensions (d=" + std::to_string(set.meta.d) +
                      ", n_gamma=" + std::to_string(set.meta.n_gamma) +
                      ") do not match the flow");
  }
  const int threads = resolve_threads(cfg.threads);
  const std::int64_t n_params = flow.n_params();
  const auto M = static_cast<std::int64_t>(set.records.size());
  const std::int64_t batch = std::min<std::int64_t>(cfg.batch_size, M);

  if (state.weights.size() == 0) {
    state.weights = flow.get_weights();
    state.adam_m = Eigen::VectorXd::Zero(n_params);
    state.adam_v = Eigen::VectorXd::Zero(n_params);
    state.best_weights = state.weights;
    state.best_nll = std::numeric_limits<double>::infinity();
  } else {
    flow.set_weights(state.weights);
  }
  const Eigen::VectorXd decay_mask = flow.weight_decay_mask();

  std::vector<std::uint64_t> order(static_cast<std::size_t>(M));
  BatchBuffers buf;
  Eigen::VectorXd grad(n_params);
  Eigen::VectorXd prev_weights = state.weights;

  const bool dequantize = cfg.dequantize;
  for (std::int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    const auto wall0 = std::chrono::steady_clock::now();
    // The shuffle and all dequantization draws for epoch e come from
    // substream e of the seed; resuming at an epoch boundary replays the
    // identical stream.
    Rng epoch_rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(epoch));
    for (std::int64_t i = 0; i < M; ++i) order[static_cast<std::size_t>(i)] = static_cast<std::uint64_t>(i);
    shuffle_order(order, epoch_rng);

    double epoch_loss_sum = 0.0;
    std::int64_t epoch_records = 0;
    double last_lr = 0.0;

    for (std::int64_t begin = 0; begin < M; begin += batch) {
      const std::int64_t end = std::min(M, begin + batch);
      gather_batch(set, order, begin, end, dequantize, epoch_rng, buf);

      prev_weights = state.weights;
      const double loss = nll_and_grad(flow, buf.ctx, buf.x1, grad, threads);
      if (!std::isfinite(loss)) {
        if (!cfg.checkpoint_path.empty()) {
          state.weights = prev_weights;
          flow.set_weights(prev_weights);
          save_checkpoint(flow, state, cfg.checkpoint_path);
        }
        throw TrainingError("training diverged (non-finite loss) at epoch " +
                            std::to_string(epoch) + ", iteration " +
                            std::to_string(state.iteration) +
                            (cfg.checkpoint_path.empty()
                                 ? ""
                                 : "; last good checkpoint written to " + cfg.checkpoint_path));
      }

      const double lr = lr_schedule(cfg, state.iteration, epoch);
      last_lr = lr;
      const double t = static_cast<double>(state.iteration + 1);
      const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
      const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
      state.adam_m = cfg.adam_beta1 * state.adam_m + (1.0 - cfg.adam_beta1) * grad;
      state.adam_v = cfg.adam_beta2 * state.adam_v + (1.0 - cfg.adam_beta2) * grad.cwiseAbs2();
      const Eigen::ArrayXd m_hat = state.adam_m.array() / bc1;
      const Eigen::ArrayXd v_hat = state.adam_v.array() / bc2;
      Eigen::VectorXd step = (m_hat / (v_hat.sqrt() + cfg.adam_eps)).matrix();
      // decoupled weight decay, weights only
      state.weights -= lr * step + (lr * cfg.weight_decay) *
                                       decay_mask.cwiseProduct(state.weights);
      flow.set_weights(state.weights);

      epoch_loss_sum += loss * static_cast<double>(end - begin);
      epoch_records += end - begin;
      ++state.iteration;
    }

    const double mean_nll = epoch_loss_sum / static_cast<double>(epoch_records);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    state.history.epochs.push_back({epoch, mean_nll, last_lr, seconds});
    state.epoch = epoch + 1;
    if (cfg.on_epoch) cfg.on_epoch(state.history.epochs.back());

    if (mean_nll < state.best_nll) {
      state.best_nll = mean_nll;
      state.best_weights = state.weights;
    }
    if (!cfg.checkpoint_path.empty() && cfg.checkpoint_interval > 0 &&
        (epoch + 1) % cfg.checkpoint_interval == 0) {
      save_checkpoint(flow, state, cfg.checkpoint_path);
    }
  }

  TrainResult result;
  result.state = state;
  result.history = state.history;
  result.model = flow;
  if (state.best_nll < std::numeric_limits<double>::infinity()) {
    result.model.set_weights(state.best_weights);
  }
  if (!cfg.checkpoint_path.empty()) {
    FlowModel current = flow;
    current.set_weights(state.weights);
    save_checkpoint(current, state, cfg.checkpoint_path);
  }
  return result;
}

TrainResult train(FlowModel flow, const TrainingSet& set, const TrainConfig& cfg) {
  return train_loop(std::move(flow), set, cfg, TrainerState{});
}

TrainResult resume(const std::string& checkpoint_path, const TrainingSet& set,
                   const TrainConfig& cfg) {
  auto [flow, state] = load_checkpoint(checkpoint_path);
  if (!state) {
    throw FormatError(checkpoint_path + " carries no trainer state to resume from");
  }
  return train_loop(std::move(flow), set, cfg, std::move(*state));
}

// ---------------------------------------------------------------------------
// checkpoint trainer section
// ---------------------------------------------------------------------------

void save_checkpoint(const FlowModel& flow, const TrainerState& state,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  detail::write_flow_payload(out, flow);
  detail::write_pod<std::uint8_t>(out, 1);
  detail::write_pod<std::int64_t>(out, state.iteration);
  detail::write_pod<std::int64_t>(out, state.epoch);
  detail::write_pod<double>(out, state.best_nll);
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(state.weights.size()));
  detail::write_vec(out, state.weights);
  detail::write_vec(out, state.adam_m);
  detail::write_vec(out, state.adam_v);
  detail::write_vec(out, state.best_weights);
  detail::write_pod<std::uint64_t>(out,
                                   static_cast<std::uint64_t>(state.history.epochs.size()));
  for (const auto& e : state.history.epochs) {
    detail::write_pod<std::int64_t>(out, e.epoch);
    detail::write_pod<double>(out, e.mean_nll);
    detail::write_pod<double>(out, e.lr);
    // wall-clock is diagnostic only; zeroing it keeps checkpoints
    // byte-deterministic under a fixed seed
    detail::write_pod<double>(out, 0.0);
  }
  if (!out) throw FormatError("write to " + path + " failed");
}

std::pair<FlowModel, std::optional<TrainerState>> load_checkpoint(
    const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  FlowModel flow = detail::read_flow_payload(in, path);
  detail::Reader r(in, path);
  const auto has_state = r.pod<std::uint8_t>("trainer-state flag");
  if (has_state == 0) return {std::move(flow), std::nullopt};

  TrainerState state;
  state.iteration = r.pod<std::int64_t>("iteration");
  state.epoch = r.pod<std::int64_t>("epoch");
  state.best_nll = r.pod<double>("best nll");
  const auto n = r.pod<std::uint64_t>("trainer weight count");
  if (n != static_cast<std::uint64_t>(flow.n_params())) {
    r.fail("trainer state size mismatch");
  }
  state.weights = r.vec(n, "weights");
  state.adam_m = r.vec(n, "adam m");
  state.adam_v = r.vec(n, "adam v");
  state.best_weights = r.vec(n, "best weights");
  const auto n_hist = r.pod<std::uint64_t>("history length");
  if (n_hist > (1ull << 32)) r.fail("implausible history length");
  state.history.epochs.resize(n_hist);
  for (auto& e : state.history.epochs) {
    e.epoch = r.pod<std::int64_t>("history epoch");
    e.mean_nll = r.pod<double>("history nll");
    e.lr = r.pod<double>("history lr");
    e.seconds = r.pod<double>("history seconds");
  }
  return {std::move(flow), std::move(state)};
}

void save_history_text(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out << "# epoch nll lr seconds\n";
  out.precision(12);
  for (const auto& e : history.epochs) {
    out << e.epoch << " " << e.mean_nll << " " << e.lr << " " << e.seconds << "\n";
  }
}

}  // namespace sfml
