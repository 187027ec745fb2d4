#include "sfml/predict.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>

#include "sfml/detail/binio.hpp"

namespace sfml {

Eigen::MatrixXd TrajectoryEnsemble::slice(int step) const {
  if (step < 0 || step > n_steps) {
    throw PredictError("ensemble slice index " + std::to_string(step) +
                       " out of range [0, " + std::to_string(n_steps) + "]");
  }
  Eigen::MatrixXd out(n_ens, d);
  for (int j = 0; j < d; ++j) out.col(j) = states.col(step * d + j);
  return out;
}

int TrajectoryEnsemble::step_of(double t) const {
  const double k = t / delta;
  const auto idx = static_cast<int>(std::llround(k));
  if (idx < 0 || idx > n_steps || std::abs(k - idx) > 1e-6) {
    throw PredictError("time " + std::to_string(t) + " is not on the rollout grid");
  }
  return idx;
}

StepModel as_step_model(const FlowModel& flow, double guard_factor) {
  StepModel m;
  m.d = flow.d;
  m.delta = flow.meta.delta;
  m.basis = flow.meta.basis;
  m.n_u = flow.meta.n_u;
  if (flow.meta.x_domain.dim() == flow.d) {
    m.guard = flow.meta.x_domain.scaled(guard_factor);
  }
  // copy the model; StepModel owns its sampler
  auto model = std::make_shared<FlowModel>(flow);
  m.step = [model](const Eigen::VectorXd& x, const LocalExcitationParams& gamma,
                   Rng& rng) {
    Eigen::VectorXd z(model->d);
    for (int i = 0; i < model->d; ++i) z[i] = rng.normal();
    return forward_T(*model, z, x, gamma.flat());
  };
  return m;
}

StepModel as_step_model(const BuiltinSystem& system, int n_sub) {
  StepModel m;
  m.d = system.d;
  m.delta = system.delta;
  m.basis = system.basis;
  m.n_u = system.n_u;
  auto sys = std::make_shared<BuiltinSystem>(system);
  m.step = [sys, n_sub](const Eigen::VectorXd& x, const LocalExcitationParams& gamma,
                        Rng& rng) { return sys->step(x, gamma, rng, n_sub); };
  return m;
}

std::vector<LocalExcitationParams> parameterize_signal(const ExcitationSignal& u,
                                                       const BasisSpec& basis,
                                                       int n_u, int n_steps) {
  if (u.n_u != n_u) {
    throw PredictError("excitation has " + std::to_string(u.n_u) +
                       " channels, the model expects " + std::to_string(n_u));
  }
  std::vector<LocalExcitationParams> out;
  out.reserve(static_cast<std::size_t>(n_steps));
  const bool endpoint_linear =
      u.kind == ExcitationSignal::Kind::sampled && basis.family == BasisFamily::piecewise_linear;
  for (int n = 0; n < n_steps; ++n) {
    const double t_n = basis.delta * n;
    if (endpoint_linear) {
      out.push_back(parameterize_piecewise_linear(u.eval(t_n), u.eval(t_n + basis.delta),
                                                  basis.delta));
    } else {
      out.push_back(parameterize_fit(u, t_n, basis).params);
    }
  }
  return out;
}

namespace {

RolloutResult rollout_with_params(const StepModel& model, const Eigen::VectorXd& x0,
                                  const std::vector<LocalExcitationParams>& params,
                                  Rng& rng) {
  const int n_steps = static_cast<int>(params.size());
  RolloutResult res;
  res.states.resize(n_steps + 1, model.d);
  res.states.row(0) = x0.transpose();
  Eigen::VectorXd x = x0;
  for (int n = 0; n < n_steps; ++n) {
    x = model.step(x, params[static_cast<std::size_t>(n)], rng);
    res.states.row(n + 1) = x.transpose();
    if (model.guard && !model.guard->contains(x)) {
      ++res.guard_violations;
      if (res.first_violation_step < 0) res.first_violation_step = n + 1;
    }
  }
  return res;
}

}  // namespace

RolloutResult rollout(const StepModel& model, const Eigen::VectorXd& x0,
                      const ExcitationSignal& u, int n_steps, Rng& rng) {
  if (n_steps < 1) throw PredictError("rollout needs n_steps >= 1");
  if (x0.size() != model.d) {
    throw PredictError("initial state has dimension " + std::to_string(x0.size()) +
                       ", the model expects " + std::to_string(model.d));
  }
  const auto params = parameterize_signal(u, model.basis, model.n_u, n_steps);
  return rollout_with_params(model, x0, params, rng);
}

TrajectoryEnsemble ensemble(const StepModel& model, const Eigen::VectorXd& x0,
                            const ExcitationSignal& u, int n_steps, int n_ens,
                            std::uint64_t seed, int threads, int* guard_violations) {
  if (n_ens < 1) throw PredictError("ensemble needs n_ens >= 1");
  if (n_steps < 1) throw PredictError("ensemble needs n_steps >= 1");
  if (x0.size() != model.d) {
    throw PredictError("initial state has dimension " + std::to_string(x0.size()) +
                       ", the model expects " + std::to_string(model.d));
  }
  // the per-step parameters are shared by all members
  const auto params = parameterize_signal(u, model.basis, model.n_u, n_steps);

  TrajectoryEnsemble ens;
  ens.n_ens = n_ens;
  ens.n_steps = n_steps;
  ens.d = model.d;
  ens.delta = model.delta;
  ens.states.resize(n_ens, (n_steps + 1) * model.d);

  std::atomic<int> violations{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  parallel_for(n_ens, threads, [&](std::int64_t member) {
    if (failed.load()) return;
    try {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(member));
      const RolloutResult res = rollout_with_params(model, x0, params, rng);
      for (int n = 0; n <= n_steps; ++n) {
        ens.states.block(member, n * model.d, 1, model.d) = res.states.row(n);
      }
      if (res.guard_violations > 0) violations.fetch_add(1);
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      failure = e.what();
      failed.store(true);
    }
  });
  if (failed.load()) throw PredictError("ensemble member failed: " + failure);
  if (guard_violations) *guard_violations = violations.load();
  return ens;
}

TrajectoryEnsemble truth_ensemble(const BuiltinSystem& system, const Eigen::VectorXd& x0,
                                  const ExcitationSignal& u, int n_steps, int n_ens,
                                  std::uint64_t seed, int n_sub, int threads) {
  if (n_ens < 1 || n_steps < 1) throw PredictError("truth ensemble needs n_ens, n_steps >= 1");
  TrajectoryEnsemble ens;
  ens.n_ens = n_ens;
  ens.n_steps = n_steps;
  ens.d = system.d;
  ens.delta = system.delta;
  ens.states.resize(n_ens, (n_steps + 1) * system.d);

  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;
  parallel_for(n_ens, threads, [&](std::int64_t member) {
    if (failed.load()) return;
    try {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(member));
      Eigen::VectorXd x = x0;
      ens.states.block(member, 0, 1, system.d) = x.transpose();
      for (int n = 0; n < n_steps; ++n) {
        x = system.step_signal(x, u, system.delta * n, rng, n_sub);
        ens.states.block(member, (n + 1) * system.d, 1, system.d) = x.transpose();
      }
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      failure = e.what();
      failed.store(true);
    }
  });
  if (failed.load()) throw SimulationError("truth ensemble member failed: " + failure);
  return ens;
}

MomentCurvesNd moments(const TrajectoryEnsemble& ens) {
  MomentCurvesNd out;
  const int n_times = ens.n_steps + 1;
  out.t.resize(n_times);
  out.mean.resize(n_times, ens.d);
  out.stddev.resize(n_times, ens.d);
  const double n = ens.n_ens;
  for (int s = 0; s < n_times; ++s) {
    out.t[s] = ens.time_of(s);
    for (int j = 0; j < ens.d; ++j) {
      const auto col = ens.states.col(s * ens.d + j);
      const double mean = col.mean();
      out.mean(s, j) = mean;
      if (ens.n_ens >= 2) {
        out.stddev(s, j) = std::sqrt((col.array() - mean).square().sum() / (n - 1.0));
      } else {
        out.stddev(s, j) = 0.0;
      }
    }
  }
  return out;
}

namespace {

double wasserstein1_sorted(Eigen::VectorXd a, Eigen::VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  return (a - b).cwiseAbs().mean();
}

double ks_two_sample(Eigen::VectorXd a, Eigen::VectorXd b) {
  std::sort(a.data(), a.data() + a.size());
  std::sort(b.data(), b.data() + b.size());
  const auto na = a.size(), nb = b.size();
  Eigen::Index i = 0, j = 0;
  double ks = 0.0;
  while (i < na && j < nb) {
    const double v = std::min(a[i], b[j]);
    while (i < na && a[i] <= v) ++i;
    while (j < nb && b[j] <= v) ++j;
    ks = std::max(ks, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return ks;
}

}  // namespace

std::pair<Eigen::VectorXd, Eigen::VectorXd> snapshot_distance(
    const TrajectoryEnsemble& a, const TrajectoryEnsemble& b, double t) {
  if (a.d != b.d) throw PredictError("ensembles have different state dimensions");
  if (a.n_ens != b.n_ens) {
    throw PredictError("snapshot distance expects matched ensemble sizes, got " +
                       std::to_string(a.n_ens) + " vs " + std::to_string(b.n_ens));
  }
  const Eigen::MatrixXd sa = a.slice(a.step_of(t));
  const Eigen::MatrixXd sb = b.slice(b.step_of(t));
  Eigen::VectorXd w1(a.d), ks(a.d);
  for (int j = 0; j < a.d; ++j) {
    w1[j] = wasserstein1_sorted(sa.col(j), sb.col(j));
    ks[j] = ks_two_sample(sa.col(j), sb.col(j));
  }
  return {w1, ks};
}

bool ValidationReport::within(const ValidationThresholds& thr) const {
  if (thr.mean_abs_max && mean_abs_err_max.maxCoeff() > *thr.mean_abs_max) return false;
  if (thr.std_abs_max && std_abs_err_max.maxCoeff() > *thr.std_abs_max) return false;
  for (const auto& snap : snapshots) {
    if (thr.w1_max && snap.w1.maxCoeff() > *thr.w1_max) return false;
    if (thr.ks_max && snap.ks.maxCoeff() > *thr.ks_max) return false;
  }
  return true;
}

ValidationReport validate(const StepModel& model, const BuiltinSystem& truth,
                          const Scenario& scenario,
                          const std::vector<double>& snapshot_times,
                          std::uint64_t seed, int threads, int truth_n_sub) {
  if (model.d != truth.d) {
    throw PredictError("model dimension " + std::to_string(model.d) +
                       " does not match the reference system d=" + std::to_string(truth.d));
  }
  const auto n_steps = static_cast<int>(std::llround(scenario.T / model.delta));
  if (n_steps < 1) throw PredictError("scenario horizon shorter than one step");

  int violations = 0;
  const TrajectoryEnsemble model_ens = ensemble(model, scenario.x0, scenario.u, n_steps,
                                                scenario.n_ens, splitmix64(seed),
                                                threads, &violations);
  const TrajectoryEnsemble ref_ens =
      truth_ensemble(truth, scenario.x0, scenario.u, n_steps, scenario.n_ens,
                     splitmix64(seed + 1), truth_n_sub, threads);

  const MomentCurvesNd mm = moments(model_ens);
  const MomentCurvesNd mr = moments(ref_ens);

  ValidationReport report;
  report.t = mm.t;
  report.model_mean = mm.mean;
  report.model_std = mm.stddev;
  report.ref_mean = mr.mean;
  report.ref_std = mr.stddev;
  report.guard_violations = violations;
  report.mean_abs_err_max =
      (mm.mean - mr.mean).cwiseAbs().colwise().maxCoeff().transpose();
  report.std_abs_err_max =
      (mm.stddev - mr.stddev).cwiseAbs().colwise().maxCoeff().transpose();
  for (double t : snapshot_times) {
    auto [w1, ks] = snapshot_distance(model_ens, ref_ens, t);
    report.snapshots.push_back({t, std::move(w1), std::move(ks)});
  }
  return report;
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'S', 'F', 'M', 'E'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save_ensemble(const TrajectoryEnsemble& ens, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  detail::write_bytes(out, kMagic, 4);
  detail::write_pod<std::uint32_t>(out, kVersion);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(ens.d));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(ens.n_ens));
  detail::write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(ens.n_steps));
  detail::write_pod<double>(out, ens.delta);
  for (int member = 0; member < ens.n_ens; ++member) {
    for (int col = 0; col < ens.states.cols(); ++col) {
      detail::write_pod<double>(out, ens.states(member, col));
    }
  }
  if (!out) throw FormatError("write to " + path + " failed");
}

TrajectoryEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  detail::Reader r(in, path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic (not an ensemble file)");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion) r.fail("unsupported ensemble version");
  TrajectoryEnsemble ens;
  ens.d = static_cast<int>(r.pod<std::uint32_t>("d"));
  ens.n_ens = static_cast<int>(r.pod<std::uint64_t>("n_ens"));
  ens.n_steps = static_cast<int>(r.pod<std::uint64_t>("n_steps"));
  ens.delta = r.pod<double>("delta");
  if (ens.d < 1 || ens.n_ens < 1 || ens.n_steps < 0) r.fail("invalid ensemble header");
  ens.states.resize(ens.n_ens, (ens.n_steps + 1) * ens.d);
  for (int member = 0; member < ens.n_ens; ++member) {
    for (int col = 0; col < ens.states.cols(); ++col) {
      ens.states(member, col) = r.pod<double>("ensemble payload");
    }
  }
  return ens;
}

void save_report_text(const ValidationReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  out.precision(10);
  const auto d = report.mean_abs_err_max.size();
  for (Eigen::Index j = 0; j < d; ++j) {
    out << "metric=mean_abs_err_max coord=" << j << " value=" << report.mean_abs_err_max[j]
        << "\n";
    out << "metric=std_abs_err_max coord=" << j << " value=" << report.std_abs_err_max[j]
        << "\n";
  }
  for (const auto& snap : report.snapshots) {
    for (Eigen::Index j = 0; j < snap.w1.size(); ++j) {
      out << "snapshot t=" << snap.t << " coord=" << j << " w1=" << snap.w1[j]
          << " ks=" << snap.ks[j] << "\n";
    }
  }
  out << "guard_violations=" << report.guard_violations << "\n";
}

Histogram histogram_fd(const Eigen::VectorXd& samples) {
  if (samples.size() < 2) throw PredictError("histogram needs >= 2 samples");
  Eigen::VectorXd sorted = samples;
  std::sort(sorted.data(), sorted.data() + sorted.size());
  const auto n = sorted.size();
  const double q1 = sorted[static_cast<Eigen::Index>(0.25 * (n - 1))];
  const double q3 = sorted[static_cast<Eigen::Index>(0.75 * (n - 1))];
  const double lo = sorted[0], hi = sorted[n - 1];
  double width = 2.0 * (q3 - q1) / std::cbrt(static_cast<double>(n));
  if (!(width > 0.0)) width = (hi > lo) ? (hi - lo) / 10.0 : 1.0;
  int bins = std::max(1, static_cast<int>(std::ceil((hi - lo) / width)));
  bins = std::min(bins, 10000);

  Histogram h;
  h.edges.resize(bins + 1);
  const double span = (hi > lo) ? (hi - lo) : 1.0;
  for (int b = 0; b <= bins; ++b) h.edges[b] = lo + span * b / bins;
  h.counts = Eigen::VectorXd::Zero(bins);
  for (Eigen::Index i = 0; i < n; ++i) {
    auto b = static_cast<int>((sorted[i] - lo) / span * bins);
    b = std::clamp(b, 0, bins - 1);
    h.counts[b] += 1.0;
  }
  return h;
}

}  // namespace sfml
