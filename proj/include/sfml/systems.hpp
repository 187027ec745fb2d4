#pragma once

#include <Eigen/Core>

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sfml/excitation.hpp"

namespace sfml {

/// Ito SDE dx = a(x,u) dt + b(x,u) dW with n_u excitation channels.
struct SdeSpec {
  int d = 0;
  int m_noise = 1;
  int n_u = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> drift;
  // returns d x m_noise
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> diffusion;
};

/// Continuous-time jump process given by reaction stoichiometry and
/// propensities. Propensities must be >= 0 for every nonnegative state.
struct ReactionNetworkSpec {
  int n_species = 0;
  int n_u = 0;
  Eigen::MatrixXi stoichiometry;  // n_reactions x n_species state changes
  std::function<Eigen::VectorXd(const Eigen::VectorXi&, const Eigen::VectorXd&)> propensity;

  int n_reactions() const { return static_cast<int>(stoichiometry.rows()); }
};

/// Stochastic heat equation u_t = eps*u_xx + alpha(t)*exp(-(x-p)^2/q^2) +
/// sigma*xi on (0, 2*pi) with periodic boundary, discretized by Fourier
/// collocation on an n_modes-point grid. The state is the real coefficient
/// vector [c0, a1, b1, ..., a_{n/2-1}, b_{n/2-1}, a_{n/2}] of dimension
/// n_modes (a_k/b_k multiply cos(kx)/sin(kx); the Nyquist sine vanishes on
/// the grid).
struct SpdeSpec {
  int n_modes = 0;  // N, also the state dimension
  double eps = 0.1;
  double p = 1.0;
  double q = 1.0;
  double sigma = 0.05;

  int dim() const { return n_modes; }
  double grid_spacing() const;            // h = 2*pi/N
  Eigen::VectorXd grid_points() const;    // x_j = j*h
  int wavenumber(int coeff_index) const;  // k of basis function `coeff_index`

  /// Coefficients of grid samples: inverse of reconstruct_on_grid.
  Eigen::VectorXd project(const Eigen::VectorXd& grid_values) const;
  Eigen::VectorXd reconstruct_on_grid(const Eigen::VectorXd& coeffs) const;
  /// Field value at arbitrary points (trigonometric interpolation).
  Eigen::VectorXd reconstruct_at(const Eigen::VectorXd& coeffs,
                                 const Eigen::VectorXd& xs) const;
  /// Modal coefficients of the source profile exp(-(x-p)^2/q^2).
  Eigen::VectorXd source_profile_modal() const;
};

/// Euler-Maruyama step of length delta using n_sub substeps; the excitation
/// is the local polynomial reconstructed at each substep's left endpoint.
Eigen::VectorXd em_step(const SdeSpec& spec, const Eigen::VectorXd& x,
                        const LocalExcitationParams& gamma, double delta,
                        int n_sub, Rng& rng);

/// Same stepping but driven by the raw signal u(t) starting at absolute time
/// t0 (used by validation oracles, never by the learned model).
Eigen::VectorXd em_step_signal(const SdeSpec& spec, const Eigen::VectorXd& x,
                               const ExcitationSignal& u, double t0,
                               double delta, int n_sub, Rng& rng);

/// Modified Next Reaction Method sample of the network state at horizon
/// delta. Time-dependent propensities are integrated on a sub-grid of
/// `hazard_subdivisions` intervals with quadratic interpolation per interval,
/// which is exact for polynomial rates of degree <= 2.
Eigen::VectorXi mnrm_simulate(const ReactionNetworkSpec& spec,
                              const Eigen::VectorXi& x0,
                              const LocalExcitationParams& gamma, double delta,
                              Rng& rng, int hazard_subdivisions = 32);

Eigen::VectorXi mnrm_simulate_signal(const ReactionNetworkSpec& spec,
                                     const Eigen::VectorXi& x0,
                                     const ExcitationSignal& u, double t0,
                                     double delta, Rng& rng,
                                     int hazard_subdivisions = 32);

/// Euler-Maruyama step of the Galerkin-projected SPDE in modal space.
Eigen::VectorXd spde_step(const SpdeSpec& spec, const Eigen::VectorXd& coeffs,
                          const LocalExcitationParams& gamma, double delta,
                          int n_sub, Rng& rng);

Eigen::VectorXd spde_step_signal(const SpdeSpec& spec, const Eigen::VectorXd& coeffs,
                                 const ExcitationSignal& alpha, double t0,
                                 double delta, int n_sub, Rng& rng);

enum class SystemKind { sde, reaction, spde };

/// A ground-truth system together with the sampling domains and step length
/// used to build its training data.
struct BuiltinSystem {
  std::string name;
  SystemKind kind = SystemKind::sde;
  std::optional<SdeSpec> sde;
  std::optional<ReactionNetworkSpec> reaction;
  std::optional<SpdeSpec> spde;

  int d = 0;
  int n_u = 0;
  bool integer_state = false;  // jump-process states are integer counts
  double delta = 0.0;
  BasisSpec basis;
  Box x_domain;
  Box gamma_domain;

  /// One-step truth simulation with the local polynomial excitation.
  Eigen::VectorXd step(const Eigen::VectorXd& x, const LocalExcitationParams& gamma,
                       Rng& rng, int n_sub = 1) const;
  /// One-step truth simulation with the raw signal (validation path).
  Eigen::VectorXd step_signal(const Eigen::VectorXd& x, const ExcitationSignal& u,
                              double t0, Rng& rng, int n_sub = 1) const;
};

/// Built-in example systems: ou_drift, ou_full, nonlinear2d, lotka_volterra,
/// double_well, gene_expression, stochastic_heat.
BuiltinSystem builtin_system(const std::string& name);
std::vector<std::string> builtin_system_names();

struct MomentCurves {
  Eigen::VectorXd t;
  Eigen::VectorXd mean;
  Eigen::VectorXd variance;
};

/// Exact mean/variance of the scalar OU process dx = [-mu*x + alpha(t)]dt +
/// sigma dW from x0, integrated with RK4 at substep <= 1e-3.
MomentCurves ou_moment_oracle(double mu, double sigma, const ExcitationSignal& alpha,
                              double x0, const Eigen::VectorXd& t_grid);

}  // namespace sfml
