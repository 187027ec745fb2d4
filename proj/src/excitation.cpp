#include "sfml/excitation.hpp"

#include <Eigen/QR>

#include <cmath>
#include <utility>

#include "sfml/expression.hpp"

namespace sfml {

std::string to_string(BasisFamily family) {
  switch (family) {
    case BasisFamily::monomial: return "monomial";
    case BasisFamily::piecewise_constant: return "piecewise-constant";
    case BasisFamily::piecewise_linear: return "piecewise-linear";
  }
  return "?";
}

BasisFamily basis_family_from_string(const std::string& name) {
  if (name == "monomial") return BasisFamily::monomial;
  if (name == "piecewise-constant" || name == "piecewise_constant")
    return BasisFamily::piecewise_constant;
  if (name == "piecewise-linear" || name == "piecewise_linear")
    return BasisFamily::piecewise_linear;
  throw ConfigError("unknown basis family \"" + name + "\"");
}

BasisSpec BasisSpec::monomial(int m, double delta) {
  BasisSpec b{BasisFamily::monomial, m, delta};
  b.validate();
  return b;
}

BasisSpec BasisSpec::piecewise_constant(double delta) {
  BasisSpec b{BasisFamily::piecewise_constant, 1, delta};
  b.validate();
  return b;
}

BasisSpec BasisSpec::piecewise_linear(double delta) {
  BasisSpec b{BasisFamily::piecewise_linear, 2, delta};
  b.validate();
  return b;
}

void BasisSpec::validate() const {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw ConfigError("basis step length must be positive, got " +
                      std::to_string(delta));
  }
  if (m < 1) throw ConfigError("basis size m must be >= 1");
  if (family == BasisFamily::piecewise_constant && m != 1) {
    throw ConfigError("piecewise-constant basis requires m=1");
  }
  if (family == BasisFamily::piecewise_linear && m != 2) {
    throw ConfigError("piecewise-linear basis requires m=2");
  }
}

Eigen::VectorXd eval_basis(const BasisSpec& basis, double tau) {
  basis.validate();
  if (!(tau >= 0.0 && tau < basis.delta)) {
    throw std::domain_error("basis evaluation outside [0, delta): tau=" +
                            std::to_string(tau) +
                            ", delta=" + std::to_string(basis.delta));
  }
  Eigen::VectorXd p(basis.m);
  switch (basis.family) {
    case BasisFamily::piecewise_constant:
      p[0] = 1.0;
      break;
    case BasisFamily::piecewise_linear:
      p[0] = 1.0;
      p[1] = tau;
      break;
    case BasisFamily::monomial: {
      double v = 1.0;
      for (int k = 0; k < basis.m; ++k) {
        p[k] = v;
        v *= tau;
      }
      break;
    }
  }
  return p;
}

Eigen::VectorXd LocalExcitationParams::flat() const {
  Eigen::VectorXd gamma(coeffs.size());
  for (int c = 0; c < coeffs.rows(); ++c) {
    gamma.segment(c * coeffs.cols(), coeffs.cols()) = coeffs.row(c);
  }
  return gamma;
}

LocalExcitationParams LocalExcitationParams::from_flat(const Eigen::VectorXd& gamma,
                                                       int n_u,
                                                       const BasisSpec& basis) {
  basis.validate();
  if (n_u < 1 || gamma.size() != static_cast<Eigen::Index>(n_u) * basis.m) {
    throw ConfigError("gamma length " + std::to_string(gamma.size()) +
                      " does not equal n_u*m = " + std::to_string(n_u) + "*" +
                      std::to_string(basis.m));
  }
  LocalExcitationParams params;
  params.basis = basis;
  params.coeffs.resize(n_u, basis.m);
  for (int c = 0; c < n_u; ++c) {
    params.coeffs.row(c) = gamma.segment(c * basis.m, basis.m);
  }
  return params;
}

Eigen::VectorXd reconstruct(const LocalExcitationParams& params, double tau) {
  if (params.coeffs.cols() != params.basis.m) {
    throw ConfigError("excitation coefficients have " +
                      std::to_string(params.coeffs.cols()) +
                      " columns but the basis has m=" +
                      std::to_string(params.basis.m));
  }
  return params.coeffs * eval_basis(params.basis, tau);
}

ExcitationSignal ExcitationSignal::analytic(int n_u,
                                            std::function<Eigen::VectorXd(double)> fn) {
  ExcitationSignal s;
  s.kind = Kind::analytic;
  s.n_u = n_u;
  s.fn = std::move(fn);
  return s;
}

ExcitationSignal ExcitationSignal::from_expressions(const std::vector<std::string>& exprs) {
  if (exprs.empty()) throw ConfigError("excitation needs at least one expression");
  std::vector<Expression> parsed;
  parsed.reserve(exprs.size());
  for (const auto& e : exprs) parsed.push_back(Expression::parse(e));
  const int n_u = static_cast<int>(parsed.size());
  return analytic(n_u, [parsed, n_u](double t) {
    Eigen::VectorXd u(n_u);
    for (int c = 0; c < n_u; ++c) u[c] = parsed[c].eval(t);
    return u;
  });
}

ExcitationSignal ExcitationSignal::sampled(Eigen::VectorXd grid, Eigen::MatrixXd values) {
  if (grid.size() < 2) throw ConfigError("sampled excitation needs >= 2 grid points");
  if (values.cols() != grid.size()) {
    throw ConfigError("sampled excitation: " + std::to_string(values.cols()) +
                      " value columns vs " + std::to_string(grid.size()) +
                      " grid points");
  }
  for (Eigen::Index i = 1; i < grid.size(); ++i) {
    if (!(grid[i] > grid[i - 1])) {
      throw ConfigError("sampled excitation grid must be strictly increasing "
                        "(violated at index " + std::to_string(i) + ")");
    }
  }
  ExcitationSignal s;
  s.kind = Kind::sampled;
  s.n_u = static_cast<int>(values.rows());
  s.grid = std::move(grid);
  s.values = std::move(values);
  return s;
}

ExcitationSignal ExcitationSignal::constant(const Eigen::VectorXd& value) {
  Eigen::VectorXd v = value;
  return analytic(static_cast<int>(value.size()),
                  [v](double) { return v; });
}

Eigen::VectorXd ExcitationSignal::eval(double t) const {
  if (kind == Kind::analytic) {
    Eigen::VectorXd u = fn(t);
    if (u.size() != n_u) {
      throw ConfigError("analytic excitation returned " + std::to_string(u.size()) +
                        " channels, expected " + std::to_string(n_u));
    }
    return u;
  }
  const double t0 = grid[0];
  const double t1 = grid[grid.size() - 1];
  if (!(t >= t0 && t <= t1)) {
    throw std::domain_error("sampled excitation queried at t=" + std::to_string(t) +
                            " outside its grid [" + std::to_string(t0) + ", " +
                            std::to_string(t1) + "]");
  }
  // binary search for the segment, then linear interpolation
  Eigen::Index hi = 1;
  Eigen::Index lo = 0;
  Eigen::Index left = 0, right = grid.size() - 1;
  while (right - left > 1) {
    const Eigen::Index mid = (left + right) / 2;
    if (grid[mid] <= t) left = mid; else right = mid;
  }
  lo = left;
  hi = right;
  const double w = (t - grid[lo]) / (grid[hi] - grid[lo]);
  return values.col(lo) * (1.0 - w) + values.col(hi) * w;
}

LocalExcitationParams parameterize_piecewise_linear(const Eigen::VectorXd& u_n,
                                                    const Eigen::VectorXd& u_next,
                                                    double delta) {
  if (!(delta > 0.0)) throw ConfigError("step length must be positive");
  if (u_n.size() != u_next.size()) {
    throw ConfigError("endpoint value dimensions differ");
  }
  LocalExcitationParams params;
  params.basis = BasisSpec::piecewise_linear(delta);
  params.coeffs.resize(u_n.size(), 2);
  params.coeffs.col(0) = u_n;
  params.coeffs.col(1) = (u_next - u_n) / delta;
  return params;
}

FitResult parameterize_fit(const ExcitationSignal& u, double t_n,
                           const BasisSpec& basis, int s) {
  basis.validate();
  if (s < basis.m) {
    throw ConfigError("fit needs at least m=" + std::to_string(basis.m) +
                      " sample points, got " + std::to_string(s));
  }
  // s equispaced points in [t_n, t_n + delta)
  Eigen::MatrixXd design(s, basis.m);
  Eigen::MatrixXd rhs(s, u.n_u);
  for (int j = 0; j < s; ++j) {
    const double tau = basis.delta * j / s;
    design.row(j) = eval_basis(basis, tau);
    rhs.row(j) = u.eval(t_n + tau);
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < basis.m) {
    throw NumericError("rank-deficient design matrix in excitation fit (rank " +
                       std::to_string(qr.rank()) + " < m=" + std::to_string(basis.m) +
                       "); basis " + to_string(basis.family) +
                       " with s=" + std::to_string(s));
  }
  Eigen::MatrixXd sol = qr.solve(rhs);  // m x n_u

  FitResult result;
  result.params.basis = basis;
  result.params.coeffs = sol.transpose();
  const double rss = (design * sol - rhs).squaredNorm();
  result.residual_rms = std::sqrt(rss / (static_cast<double>(s) * u.n_u));
  return result;
}

LocalExcitationParams sample_gamma(const Box& domain, int n_u,
                                   const BasisSpec& basis, Rng& rng) {
  domain.validate();
  basis.validate();
  if (domain.dim() != n_u * basis.m) {
    throw ConfigError("gamma domain has dimension " + std::to_string(domain.dim()) +
                      ", expected n_u*m = " + std::to_string(n_u * basis.m));
  }
  Eigen::VectorXd gamma(domain.dim());
  for (int i = 0; i < domain.dim(); ++i) {
    gamma[i] = rng.uniform(domain.lo[i], domain.hi[i]);
  }
  return LocalExcitationParams::from_flat(gamma, n_u, basis);
}

}  // namespace sfml
