#include "sfml/dataset.hpp"

#include <cmath>
#include <fstream>
#include <mutex>
#include <sstream>

#include "sfml/detail/binio.hpp"

#include <nlohmann/json.hpp>

namespace sfml {

void TrainingSetMeta::validate() const {
  basis.validate();
  if (d < 1) throw ConfigError("training set dimension d must be >= 1");
  if (n_u < 1) throw ConfigError("training set n_u must be >= 1");
  if (n_gamma != n_u * basis.m) {
    throw ConfigError("n_gamma=" + std::to_string(n_gamma) + " != n_u*m=" +
                      std::to_string(n_u * basis.m));
  }
  if (!(delta > 0.0)) throw ConfigError("training set delta must be positive");
  if (M < 1) throw ConfigError("training set must contain at least one record");
}

namespace {

void check_record(const SnapshotPair& rec, const TrainingSetMeta& meta,
                  std::uint64_t index) {
  const bool ok = rec.gamma.size() == meta.n_gamma && rec.x0.size() == meta.d &&
                  rec.x1.size() == meta.d && rec.gamma.allFinite() &&
                  rec.x0.allFinite() && rec.x1.allFinite();
  if (!ok) {
    throw FormatError("record " + std::to_string(index) +
                      " has wrong dimensions or non-finite entries");
  }
}

}  // namespace

TrainingSet generate_training_set(const BuiltinSystem& system, std::uint64_t M,
                                  const Box& x_domain, const Box& gamma_domain,
                                  double delta, std::uint64_t seed, int threads,
                                  int n_sub) {
  if (M < 1) throw ConfigError("M must be >= 1");
  x_domain.validate();
  gamma_domain.validate();
  if (x_domain.dim() != system.d) {
    throw ConfigError("x domain dimension " + std::to_string(x_domain.dim()) +
                      " does not match system d=" + std::to_string(system.d));
  }
  BasisSpec basis = system.basis;
  basis.delta = delta;
  basis.validate();
  if (gamma_domain.dim() != system.n_u * basis.m) {
    throw ConfigError("gamma domain dimension " + std::to_string(gamma_domain.dim()) +
                      " does not match n_u*m=" + std::to_string(system.n_u * basis.m));
  }

  TrainingSet set;
  set.meta.d = system.d;
  set.meta.n_u = system.n_u;
  set.meta.basis = basis;
  set.meta.n_gamma = system.n_u * basis.m;
  set.meta.delta = delta;
  set.meta.M = M;
  set.meta.x_domain = x_domain;
  set.meta.gamma_domain = gamma_domain;
  set.meta.system_name = system.name;
  set.meta.seed = seed;
  set.meta.integer_state = system.integer_state;
  set.records.resize(M);

  std::string failure;
  std::mutex failure_mutex;
  parallel_for(static_cast<std::int64_t>(M), threads, [&](std::int64_t j) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j));
    SnapshotPair& rec = set.records[static_cast<std::size_t>(j)];
    rec.x0.resize(system.d);
    for (int i = 0; i < system.d; ++i) {
      if (system.integer_state) {
        rec.x0[i] = static_cast<double>(rng.uniform_int(
            static_cast<std::int64_t>(std::ceil(x_domain.lo[i])),
            static_cast<std::int64_t>(std::floor(x_domain.hi[i]))));
      } else {
        rec.x0[i] = rng.uniform(x_domain.lo[i], x_domain.hi[i]);
      }
    }
    LocalExcitationParams gamma = sample_gamma(gamma_domain, system.n_u, basis, rng);
    rec.gamma = gamma.flat();
    try {
      rec.x1 = system.step(rec.x0, gamma, rng, n_sub);
    } catch (const std::exception& e) {
      std::lock_guard lock(failure_mutex);
      if (failure.empty()) {
        failure = "record " + std::to_string(j) + ": " + e.what();
      }
    }
  });
  if (!failure.empty()) throw SimulationError("training-set generation failed: " + failure);
  return set;
}

TrainingSet generate_training_set(const BuiltinSystem& system, std::uint64_t M,
                                  std::uint64_t seed, int threads) {
  return generate_training_set(system, M, system.x_domain, system.gamma_domain,
                               system.delta, seed, threads);
}

TrainingSet extract_pairs(const std::vector<IoTrajectory>& trajectories,
                          const BasisSpec& basis) {
  basis.validate();
  if (trajectories.empty()) throw ConfigError("extract_pairs needs trajectories");
  const int n_u = static_cast<int>(trajectories.front().u.rows());
  const int d = static_cast<int>(trajectories.front().x.rows());

  TrainingSet set;
  set.meta.d = d;
  set.meta.n_u = n_u;
  set.meta.basis = basis;
  set.meta.n_gamma = n_u * basis.m;
  set.meta.delta = basis.delta;
  set.meta.system_name = "extracted";
  set.meta.seed = 0;

  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const IoTrajectory& traj = trajectories[i];
    if (traj.u.rows() != n_u || traj.x.rows() != d) {
      throw FormatError("trajectory " + std::to_string(i) +
                        " has inconsistent channel/state dimensions");
    }
    if (traj.u.cols() != traj.x.cols()) {
      throw FormatError("trajectory " + std::to_string(i) + " has " +
                        std::to_string(traj.u.cols()) + " u columns but " +
                        std::to_string(traj.x.cols()) + " x columns");
    }
    const Eigen::Index len = traj.x.cols();
    if (len < 2) {
      throw FormatError("trajectory " + std::to_string(i) +
                        " is too short to extract a pair (length " +
                        std::to_string(len) + ")");
    }
    for (Eigen::Index n = 0; n + 1 < len; ++n) {
      SnapshotPair rec;
      if (traj.analytic_u) {
        // fit the analytic signal on this step; trajectory clock starts at 0
        rec.gamma =
            parameterize_fit(*traj.analytic_u, basis.delta * static_cast<double>(n), basis)
                .params.flat();
      } else if (basis.family == BasisFamily::piecewise_linear) {
        rec.gamma =
            parameterize_piecewise_linear(traj.u.col(n), traj.u.col(n + 1), basis.delta)
                .flat();
      } else {
        // fit through the linear interpolant of the two endpoint samples
        Eigen::VectorXd grid(2);
        grid << 0.0, basis.delta;
        ExcitationSignal seg =
            ExcitationSignal::sampled(grid, traj.u.middleCols(n, 2));
        rec.gamma = parameterize_fit(seg, 0.0, basis).params.flat();
      }
      rec.x0 = traj.x.col(n);
      rec.x1 = traj.x.col(n + 1);
      set.records.push_back(std::move(rec));
    }
  }
  set.meta.M = set.records.size();

  // empirical bounding boxes stand in for the unknown sampling domains
  Eigen::VectorXd xlo = set.records.front().x0, xhi = xlo;
  Eigen::VectorXd glo = set.records.front().gamma, ghi = glo;
  for (const auto& rec : set.records) {
    xlo = xlo.cwiseMin(rec.x0).cwiseMin(rec.x1);
    xhi = xhi.cwiseMax(rec.x0).cwiseMax(rec.x1);
    glo = glo.cwiseMin(rec.gamma);
    ghi = ghi.cwiseMax(rec.gamma);
  }
  set.meta.x_domain = Box(xlo, xhi);
  set.meta.gamma_domain = Box(glo, ghi);
  set.meta.validate();
  return set;
}

namespace {
constexpr char kMagic[4] = {'S', 'F', 'M', 'L'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void save(const TrainingSet& set, const std::string& path, bool json_sidecar) {
  set.meta.validate();
  if (set.records.size() != set.meta.M) {
    throw FormatError("record count " + std::to_string(set.records.size()) +
                      " does not match meta M=" + std::to_string(set.meta.M));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");

  detail::write_bytes(out, kMagic, 4);
  detail::write_pod<std::uint32_t>(out, kVersion);
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.meta.d));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.meta.n_u));
  detail::write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(set.meta.basis.family));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.meta.basis.m));
  detail::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(set.meta.n_gamma));
  detail::write_pod<double>(out, set.meta.delta);
  detail::write_pod<std::uint64_t>(out, set.meta.M);
  detail::write_box(out, set.meta.x_domain);
  detail::write_box(out, set.meta.gamma_domain);
  detail::write_string(out, set.meta.system_name);
  detail::write_pod<std::uint64_t>(out, set.meta.seed);
  detail::write_pod<std::uint8_t>(out, set.meta.integer_state ? 1 : 0);

  for (std::uint64_t j = 0; j < set.meta.M; ++j) {
    const SnapshotPair& rec = set.records[j];
    check_record(rec, set.meta, j);
    detail::write_vec(out, rec.gamma);
    detail::write_vec(out, rec.x0);
    detail::write_vec(out, rec.x1);
  }
  if (!out) throw FormatError("write to " + path + " failed");
  out.close();

  if (json_sidecar) {
    nlohmann::json j;
    j["format"] = "SFML";
    j["version"] = kVersion;
    j["d"] = set.meta.d;
    j["n_u"] = set.meta.n_u;
    j["basis_family"] = to_string(set.meta.basis.family);
    j["m"] = set.meta.basis.m;
    j["n_gamma"] = set.meta.n_gamma;
    j["delta"] = set.meta.delta;
    j["M"] = set.meta.M;
    j["x_domain"] = {{"lo", std::vector<double>(set.meta.x_domain.lo.begin(),
                                                set.meta.x_domain.lo.end())},
                     {"hi", std::vector<double>(set.meta.x_domain.hi.begin(),
                                                set.meta.x_domain.hi.end())}};
    j["gamma_domain"] = {{"lo", std::vector<double>(set.meta.gamma_domain.lo.begin(),
                                                    set.meta.gamma_domain.lo.end())},
                         {"hi", std::vector<double>(set.meta.gamma_domain.hi.begin(),
                                                    set.meta.gamma_domain.hi.end())}};
    j["system"] = set.meta.system_name;
    j["seed"] = set.meta.seed;
    j["integer_state"] = set.meta.integer_state;
    std::ofstream sidecar(path + ".json");
    sidecar << j.dump(2) << "\n";
  }
}

TrainingSet load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  detail::Reader r(in, path);

  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    r.fail("bad magic (not an SFML dataset)");
  }
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }

  TrainingSet set;
  set.meta.d = static_cast<int>(r.pod<std::uint32_t>("d"));
  set.meta.n_u = static_cast<int>(r.pod<std::uint32_t>("n_u"));
  const auto family = r.pod<std::uint8_t>("basis family");
  if (family > 2) r.fail("unknown basis family id " + std::to_string(family));
  set.meta.basis.family = static_cast<BasisFamily>(family);
  set.meta.basis.m = static_cast<int>(r.pod<std::uint32_t>("m"));
  set.meta.n_gamma = static_cast<int>(r.pod<std::uint32_t>("n_gamma"));
  set.meta.delta = r.pod<double>("delta");
  set.meta.basis.delta = set.meta.delta;
  set.meta.M = r.pod<std::uint64_t>("M");
  set.meta.x_domain = detail::read_box(r, "x domain");
  set.meta.gamma_domain = detail::read_box(r, "gamma domain");
  set.meta.system_name = r.str("system name");
  set.meta.seed = r.pod<std::uint64_t>("seed");
  set.meta.integer_state = r.pod<std::uint8_t>("integer-state flag") != 0;

  try {
    set.meta.validate();
  } catch (const std::exception& e) {
    r.fail(std::string("invalid header: ") + e.what());
  }

  set.records.resize(set.meta.M);
  for (std::uint64_t j = 0; j < set.meta.M; ++j) {
    SnapshotPair& rec = set.records[j];
    rec.gamma = r.vec(static_cast<std::size_t>(set.meta.n_gamma), "record gamma");
    rec.x0 = r.vec(static_cast<std::size_t>(set.meta.d), "record x0");
    rec.x1 = r.vec(static_cast<std::size_t>(set.meta.d), "record x1");
    check_record(rec, set.meta, j);
  }
  return set;
}

NormStats NormStats::identity(int d, int n_gamma) {
  NormStats s;
  s.ctx_shift = Eigen::VectorXd::Zero(d + n_gamma);
  s.ctx_scale = Eigen::VectorXd::Ones(d + n_gamma);
  s.target_shift = Eigen::VectorXd::Zero(d);
  s.target_scale = Eigen::VectorXd::Ones(d);
  return s;
}

NormStats compute_norm_stats(const TrainingSet& set) {
  if (set.records.size() < 2) {
    throw ConfigError("normalization statistics need at least 2 records");
  }
  const int d = set.meta.d;
  const int nc = d + set.meta.n_gamma;
  const double M = static_cast<double>(set.records.size());

  Eigen::VectorXd ctx_mean = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd tgt_mean = Eigen::VectorXd::Zero(d);
  for (const auto& rec : set.records) {
    ctx_mean.head(d) += rec.x0;
    ctx_mean.tail(nc - d) += rec.gamma;
    tgt_mean += rec.x1;
  }
  ctx_mean /= M;
  tgt_mean /= M;

  Eigen::VectorXd ctx_var = Eigen::VectorXd::Zero(nc);
  Eigen::VectorXd tgt_var = Eigen::VectorXd::Zero(d);
  for (const auto& rec : set.records) {
    ctx_var.head(d) += (rec.x0 - ctx_mean.head(d)).cwiseAbs2();
    ctx_var.tail(nc - d) += (rec.gamma - ctx_mean.tail(nc - d)).cwiseAbs2();
    tgt_var += (rec.x1 - tgt_mean).cwiseAbs2();
  }
  ctx_var /= M;
  tgt_var /= M;

  NormStats stats;
  stats.ctx_shift = ctx_mean;
  stats.target_shift = tgt_mean;
  stats.ctx_scale = ctx_var.cwiseSqrt().cwiseMax(1e-8);
  stats.target_scale = tgt_var.cwiseSqrt().cwiseMax(1e-8);
  return stats;
}

}  // namespace sfml
