#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "sfml/common.hpp"
#include "sfml/rng.hpp"

namespace sfml {

/// Polynomial family used to parameterize an excitation on one step.
enum class BasisFamily : std::uint8_t {
  monomial = 0,            // p_k(tau) = tau^(k-1), k = 1..m
  piecewise_constant = 1,  // m = 1
  piecewise_linear = 2,    // m = 2, coefficients are (value, slope)
};

std::string to_string(BasisFamily family);
BasisFamily basis_family_from_string(const std::string& name);

/// Basis family + size + step length. `m` basis functions span the
/// polynomials of degree <= m-1 on the local step [0, delta).
struct BasisSpec {
  BasisFamily family = BasisFamily::monomial;
  int m = 1;
  double delta = 0.0;

  static BasisSpec monomial(int m, double delta);
  static BasisSpec piecewise_constant(double delta);
  static BasisSpec piecewise_linear(double delta);

  void validate() const;
  bool operator==(const BasisSpec&) const = default;
};

/// Values of the m basis functions at local time tau in [0, delta).
Eigen::VectorXd eval_basis(const BasisSpec& basis, double tau);

/// Per-step polynomial coefficients for all excitation channels.
/// coeffs is n_u x m (channel-major); flat() appends rows, so the flattened
/// gamma vector lists channel 0's coefficients by increasing degree, then
/// channel 1's, and so on.
struct LocalExcitationParams {
  Eigen::MatrixXd coeffs;  // n_u x m
  BasisSpec basis;

  int n_u() const { return static_cast<int>(coeffs.rows()); }
  int n_gamma() const { return static_cast<int>(coeffs.size()); }

  Eigen::VectorXd flat() const;
  static LocalExcitationParams from_flat(const Eigen::VectorXd& gamma, int n_u,
                                         const BasisSpec& basis);
};

/// Evaluates the parameterized excitation at local time tau in [0, delta).
Eigen::VectorXd reconstruct(const LocalExcitationParams& params, double tau);

/// Excitation/control signal u(t), either an analytic rule or samples on a
/// strictly increasing time grid (evaluated by linear interpolation).
struct ExcitationSignal {
  enum class Kind { analytic, sampled };

  Kind kind = Kind::analytic;
  int n_u = 0;
  std::function<Eigen::VectorXd(double)> fn;  // analytic
  Eigen::VectorXd grid;                       // sampled
  Eigen::MatrixXd values;                     // n_u x grid.size()

  static ExcitationSignal analytic(int n_u, std::function<Eigen::VectorXd(double)> fn);
  /// One expression string per channel, variable "t".
  static ExcitationSignal from_expressions(const std::vector<std::string>& exprs);
  static ExcitationSignal sampled(Eigen::VectorXd grid, Eigen::MatrixXd values);
  static ExcitationSignal constant(const Eigen::VectorXd& value);

  Eigen::VectorXd eval(double t) const;
};

/// Piecewise-linear parameterization from the signal values at the two step
/// endpoints. Only the values enter, never the wall-clock times.
LocalExcitationParams parameterize_piecewise_linear(const Eigen::VectorXd& u_n,
                                                    const Eigen::VectorXd& u_next,
                                                    double delta);

struct FitResult {
  LocalExcitationParams params;
  double residual_rms = 0.0;
};

/// Least-squares fit of the basis to u sampled at `s` equispaced points in
/// [t_n, t_n + delta). Exact (up to conditioning) when u restricted to the
/// step lies in the basis span.
FitResult parameterize_fit(const ExcitationSignal& u, double t_n,
                           const BasisSpec& basis, int s = 10);

/// Uniform i.i.d. sample of gamma from `domain` (one interval per flattened
/// coefficient), shaped by `basis` and `n_u`.
LocalExcitationParams sample_gamma(const Box& domain, int n_u,
                                   const BasisSpec& basis, Rng& rng);

}  // namespace sfml
