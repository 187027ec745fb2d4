#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfml/excitation.hpp"
#include "sfml/systems.hpp"

namespace sfml {

/// One training record: a trajectory of length two over one step, driven by
/// the excitation parameterized by `gamma`.
struct SnapshotPair {
  Eigen::VectorXd gamma;
  Eigen::VectorXd x0;
  Eigen::VectorXd x1;
};

struct TrainingSetMeta {
  int d = 0;
  int n_u = 0;
  BasisSpec basis;
  int n_gamma = 0;  // = n_u * basis.m
  double delta = 0.0;
  std::uint64_t M = 0;
  Box x_domain;
  Box gamma_domain;
  std::string system_name;
  std::uint64_t seed = 0;
  bool integer_state = false;

  void validate() const;
};

struct TrainingSet {
  TrainingSetMeta meta;
  std::vector<SnapshotPair> records;
};

/// Draws (x0, gamma) uniformly from the boxes, advances the truth system one
/// step, and collects M records. Record j uses rng substream j of `seed`, so
/// the result is bitwise reproducible and parallelizable.
TrainingSet generate_training_set(const BuiltinSystem& system, std::uint64_t M,
                                  const Box& x_domain, const Box& gamma_domain,
                                  double delta, std::uint64_t seed,
                                  int threads = 1, int n_sub = 1);

/// Convenience overload using the system's own sampling domains and step.
TrainingSet generate_training_set(const BuiltinSystem& system, std::uint64_t M,
                                  std::uint64_t seed, int threads = 1);

/// One observed I/O sequence: u and x sampled at L+1 uniform steps. If
/// `analytic_u` is set, per-step parameterization fits that signal (clock
/// starting at 0 for each trajectory); otherwise consecutive u columns give a
/// piecewise-linear parameterization.
struct IoTrajectory {
  Eigen::MatrixXd u;  // n_u x (L+1)
  Eigen::MatrixXd x;  // d   x (L+1)
  std::optional<ExcitationSignal> analytic_u;
};

/// Reorganizes trajectories into M = sum L_i snapshot pairs. Time values are
/// never stored; records are invariant to shifting the observation clock.
TrainingSet extract_pairs(const std::vector<IoTrajectory>& trajectories,
                          const BasisSpec& basis);

/// Binary dataset format (little-endian), bit-exact across save/load:
///   magic "SFML" | u32 version=1 | u32 d | u32 n_u | u8 basis family |
///   u32 m | u32 n_gamma | f64 delta | u64 M |
///   u32 len(I_x) + f64 lo[] + f64 hi[] | u32 len(I_gamma) + f64 lo[] + hi[] |
///   u32 name length + UTF-8 name | u64 seed | u8 integer-state flag |
///   M records of f64: gamma (n_gamma), x0 (d), x1 (d).
void save(const TrainingSet& set, const std::string& path,
          bool json_sidecar = false);
TrainingSet load(const std::string& path);

/// Per-coordinate affine normalization for the conditioner input (x0, gamma)
/// and the target x1. Scales are std-devs floored at 1e-8.
struct NormStats {
  Eigen::VectorXd ctx_shift, ctx_scale;        // dim d + n_gamma
  Eigen::VectorXd target_shift, target_scale;  // dim d

  static NormStats identity(int d, int n_gamma);
};

NormStats compute_norm_stats(const TrainingSet& set);

}  // namespace sfml
