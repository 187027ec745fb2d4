#include "sfml/systems.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace sfml {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Polynomial evaluation without the [0, delta) bound check; simulators need
// the closure of the step (e.g. propensity nodes at tau = delta).
Eigen::VectorXd reconstruct_unchecked(const LocalExcitationParams& params, double tau) {
  const BasisSpec& basis = params.basis;
  Eigen::VectorXd p(basis.m);
  switch (basis.family) {
    case BasisFamily::piecewise_constant: p[0] = 1.0; break;
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
  return params.coeffs * p;
}

using UAt = std::function<Eigen::VectorXd(double)>;  // local time tau -> u

Eigen::VectorXd em_core(const SdeSpec& spec, Eigen::VectorXd x, double delta,
                        int n_sub, Rng& rng, const UAt& u_at) {
  if (n_sub < 1) throw ConfigError("em_step requires n_sub >= 1");
  if (x.size() != spec.d) {
    throw ConfigError("state dimension " + std::to_string(x.size()) +
                      " does not match SDE d=" + std::to_string(spec.d));
  }
  const double h = delta / n_sub;
  const double sqrt_h = std::sqrt(h);
  Eigen::VectorXd z(spec.m_noise);
  for (int s = 0; s < n_sub; ++s) {
    const Eigen::VectorXd u = u_at(h * s);
    const Eigen::VectorXd a = spec.drift(x, u);
    const Eigen::MatrixXd b = spec.diffusion(x, u);
    for (int i = 0; i < spec.m_noise; ++i) z[i] = rng.normal();
    x += a * h + b * (sqrt_h * z);
    if (!x.allFinite()) {
      throw SimulationError("Euler-Maruyama state became non-finite at substep " +
                            std::to_string(s) + " of " + std::to_string(n_sub));
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Modified Next Reaction Method with time-dependent propensities.
//
// Between state changes every propensity is a function of local time only.
// On each hazard sub-interval it is replaced by the quadratic through its
// values at the two endpoints and the midpoint (exact whenever the propensity
// is polynomial of degree <= 2 in tau, which covers constant rates and the
// degree-2 local excitations). The quadratic is clamped at zero when
// integrating, so hazards stay nonnegative even near a rate's zero crossing.
// ---------------------------------------------------------------------------

struct HazardQuad {
  // q(s) = c0 + c1 s + c2 s^2 on s in [0, len] (s local to the sub-segment)
  double c0 = 0, c1 = 0, c2 = 0, len = 0;

  static HazardQuad through(double v0, double vm, double v1, double len) {
    HazardQuad q;
    q.len = len;
    const double half = 0.5 * len;
    const double d1 = (vm - v0) / half;
    const double d2 = ((v1 - vm) / half - d1) / len;
    q.c2 = d2;
    q.c1 = d1 - half * d2;
    q.c0 = v0;
    return q;
  }

  double value(double s) const { return c0 + s * (c1 + s * c2); }

  // antiderivative of the unclamped quadratic
  double primitive(double s) const {
    return s * (c0 + s * (0.5 * c1 + s * c2 / 3.0));
  }

  // integral of max(q, 0) over [0, s]
  double integral(double s) const {
    // sign pieces split at the real roots inside (0, s)
    double roots[2];
    int n_roots = 0;
    if (std::abs(c2) > 1e-300) {
      const double disc = c1 * c1 - 4.0 * c2 * c0;
      if (disc > 0.0) {
        const double sq = std::sqrt(disc);
        double r0 = (-c1 - sq) / (2.0 * c2);
        double r1 = (-c1 + sq) / (2.0 * c2);
        if (r0 > r1) std::swap(r0, r1);
        if (r0 > 0.0 && r0 < s) roots[n_roots++] = r0;
        if (r1 > 0.0 && r1 < s) roots[n_roots++] = r1;
      }
    } else if (std::abs(c1) > 1e-300) {
      const double r = -c0 / c1;
      if (r > 0.0 && r < s) roots[n_roots++] = r;
    }
    double total = 0.0;
    double a = 0.0;
    for (int i = 0; i <= n_roots; ++i) {
      const double b = (i < n_roots) ? roots[i] : s;
      if (b > a) {
        if (value(0.5 * (a + b)) > 0.0) total += primitive(b) - primitive(a);
        a = b;
      }
    }
    return std::max(total, 0.0);
  }

  // smallest s in (0, len] with integral(s) == budget, or len + 1 if the
  // whole sub-segment cannot spend the budget
  double solve(double budget) const {
    if (integral(len) < budget) return len + 1.0;
    double lo = 0.0, hi = len;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (integral(mid) >= budget) hi = mid; else lo = mid;
    }
    return hi;
  }
};

Eigen::VectorXi mnrm_core(const ReactionNetworkSpec& spec, Eigen::VectorXi x,
                          double delta, Rng& rng, int subdivisions,
                          const UAt& u_at) {
  if ((x.array() < 0).any()) {
    throw SimulationError("reaction network state must be componentwise >= 0");
  }
  const int n_r = spec.n_reactions();
  if (spec.stoichiometry.cols() != spec.n_species) {
    throw ConfigError("stoichiometry has " + std::to_string(spec.stoichiometry.cols()) +
                      " columns, expected n_species=" + std::to_string(spec.n_species));
  }
  constexpr std::int64_t kMaxFirings = 10'000'000;

  auto rates_at = [&](double tau) {
    Eigen::VectorXd r = spec.propensity(x, u_at(tau));
    if (r.size() != n_r) {
      throw ConfigError("propensity returned " + std::to_string(r.size()) +
                        " rates, expected " + std::to_string(n_r));
    }
    for (int j = 0; j < n_r; ++j) {
      if (!std::isfinite(r[j]) || r[j] < 0.0) {
        throw SimulationError("negative or non-finite propensity " +
                              std::to_string(r[j]) + " for reaction " +
                              std::to_string(j) + " at tau=" + std::to_string(tau));
      }
    }
    return r;
  };

  std::vector<double> remaining(n_r);  // internal time until each next firing
  for (int j = 0; j < n_r; ++j) remaining[j] = rng.exponential();

  std::vector<HazardQuad> quad(n_r);
  std::int64_t firings = 0;
  double t = 0.0;

  for (int seg = 0; seg < subdivisions; ++seg) {
    const double seg_hi = (seg + 1 == subdivisions) ? delta : delta * (seg + 1) / subdivisions;
    while (t < seg_hi) {
      const double len = seg_hi - t;
      const Eigen::VectorXd r0 = rates_at(t);
      const Eigen::VectorXd rm = rates_at(t + 0.5 * len);
      const Eigen::VectorXd r1 = rates_at(seg_hi);
      for (int j = 0; j < n_r; ++j) {
        quad[j] = HazardQuad::through(r0[j], rm[j], r1[j], len);
      }
      int j_min = -1;
      double s_min = len + 1.0;
      for (int j = 0; j < n_r; ++j) {
        const double s = quad[j].solve(remaining[j]);
        if (s <= len && s < s_min) {
          s_min = s;
          j_min = j;
        }
      }
      if (j_min < 0) {
        for (int j = 0; j < n_r; ++j) {
          remaining[j] = std::max(0.0, remaining[j] - quad[j].integral(len));
        }
        t = seg_hi;
        break;
      }
      for (int j = 0; j < n_r; ++j) {
        if (j != j_min) {
          remaining[j] = std::max(0.0, remaining[j] - quad[j].integral(s_min));
        }
      }
      remaining[j_min] = rng.exponential();
      x += spec.stoichiometry.row(j_min).transpose();
      if ((x.array() < 0).any()) {
        throw SimulationError("reaction " + std::to_string(j_min) +
                              " fired into a negative state; its propensity "
                              "must vanish at the boundary");
      }
      if (++firings > kMaxFirings) {
        throw SimulationError("reaction simulation exceeded " +
                              std::to_string(kMaxFirings) +
                              " firings over one step (runaway network?)");
      }
      t += s_min;
    }
  }
  return x;
}

Eigen::VectorXd spde_core(const SpdeSpec& spec, Eigen::VectorXd c, double delta,
                          int n_sub, Rng& rng, const UAt& u_at) {
  if (n_sub < 1) throw ConfigError("spde_step requires n_sub >= 1");
  if (c.size() != spec.dim()) {
    throw ConfigError("coefficient vector has dimension " + std::to_string(c.size()) +
                      ", expected " + std::to_string(spec.dim()));
  }
  const double h = delta / n_sub;
  const Eigen::VectorXd g = spec.source_profile_modal();
  Eigen::VectorXd lambda(spec.dim());
  for (int j = 0; j < spec.dim(); ++j) {
    const double k = spec.wavenumber(j);
    lambda[j] = -spec.eps * k * k;
  }
  const double noise_std = spec.sigma * std::sqrt(h / spec.grid_spacing());
  for (int s = 0; s < n_sub; ++s) {
    const double alpha = u_at(h * s)[0];
    for (int j = 0; j < spec.dim(); ++j) {
      c[j] += h * (lambda[j] * c[j] + alpha * g[j]) + noise_std * rng.normal();
    }
    if (!c.allFinite()) {
      throw SimulationError("SPDE state became non-finite at substep " +
                            std::to_string(s) + " of " + std::to_string(n_sub));
    }
  }
  return c;
}

UAt gamma_eval(const LocalExcitationParams& gamma) {
  return [&gamma](double tau) { return reconstruct_unchecked(gamma, tau); };
}

UAt signal_eval(const ExcitationSignal& u, double t0) {
  return [&u, t0](double tau) { return u.eval(t0 + tau); };
}

}  // namespace

// ---------------------------------------------------------------------------
// SpdeSpec: real trigonometric collocation basis
// ---------------------------------------------------------------------------

double SpdeSpec::grid_spacing() const { return 2.0 * kPi / n_modes; }

Eigen::VectorXd SpdeSpec::grid_points() const {
  Eigen::VectorXd x(n_modes);
  for (int j = 0; j < n_modes; ++j) x[j] = grid_spacing() * j;
  return x;
}

int SpdeSpec::wavenumber(int coeff_index) const {
  if (coeff_index == 0) return 0;
  return (coeff_index % 2 == 1) ? (coeff_index + 1) / 2 : coeff_index / 2;
}

Eigen::VectorXd SpdeSpec::reconstruct_at(const Eigen::VectorXd& coeffs,
                                         const Eigen::VectorXd& xs) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(xs.size());
  for (Eigen::Index i = 0; i < xs.size(); ++i) {
    double v = coeffs[0];
    for (int j = 1; j < n_modes; ++j) {
      const double k = wavenumber(j);
      v += coeffs[j] * ((j % 2 == 1) ? std::cos(k * xs[i]) : std::sin(k * xs[i]));
    }
    out[i] = v;
  }
  return out;
}

Eigen::VectorXd SpdeSpec::reconstruct_on_grid(const Eigen::VectorXd& coeffs) const {
  return reconstruct_at(coeffs, grid_points());
}

Eigen::VectorXd SpdeSpec::project(const Eigen::VectorXd& grid_values) const {
  if (grid_values.size() != n_modes) {
    throw ConfigError("projection expects " + std::to_string(n_modes) +
                      " grid values, got " + std::to_string(grid_values.size()));
  }
  const Eigen::VectorXd xs = grid_points();
  Eigen::VectorXd c(n_modes);
  const int nyquist = n_modes - 1;  // cos(N/2 x) column for even N
  for (int j = 0; j < n_modes; ++j) {
    const double k = wavenumber(j);
    double acc = 0.0;
    for (int i = 0; i < n_modes; ++i) {
      const double b = (j == 0) ? 1.0
                       : (j % 2 == 1) ? std::cos(k * xs[i])
                                      : std::sin(k * xs[i]);
      acc += grid_values[i] * b;
    }
    const double scale = (j == 0 || (j == nyquist && n_modes % 2 == 0))
                             ? 1.0 / n_modes
                             : 2.0 / n_modes;
    c[j] = scale * acc;
  }
  return c;
}

Eigen::VectorXd SpdeSpec::source_profile_modal() const {
  const Eigen::VectorXd xs = grid_points();
  Eigen::VectorXd f(n_modes);
  for (int i = 0; i < n_modes; ++i) {
    const double dx = xs[i] - p;
    f[i] = std::exp(-dx * dx / (q * q));
  }
  return project(f);
}

// ---------------------------------------------------------------------------
// public stepping entry points
// ---------------------------------------------------------------------------

Eigen::VectorXd em_step(const SdeSpec& spec, const Eigen::VectorXd& x,
                        const LocalExcitationParams& gamma, double delta,
                        int n_sub, Rng& rng) {
  return em_core(spec, x, delta, n_sub, rng, gamma_eval(gamma));
}

Eigen::VectorXd em_step_signal(const SdeSpec& spec, const Eigen::VectorXd& x,
                               const ExcitationSignal& u, double t0,
                               double delta, int n_sub, Rng& rng) {
  return em_core(spec, x, delta, n_sub, rng, signal_eval(u, t0));
}

Eigen::VectorXi mnrm_simulate(const ReactionNetworkSpec& spec,
                              const Eigen::VectorXi& x0,
                              const LocalExcitationParams& gamma, double delta,
                              Rng& rng, int hazard_subdivisions) {
  return mnrm_core(spec, x0, delta, rng, hazard_subdivisions, gamma_eval(gamma));
}

Eigen::VectorXi mnrm_simulate_signal(const ReactionNetworkSpec& spec,
                                     const Eigen::VectorXi& x0,
                                     const ExcitationSignal& u, double t0,
                                     double delta, Rng& rng,
                                     int hazard_subdivisions) {
  return mnrm_core(spec, x0, delta, rng, hazard_subdivisions, signal_eval(u, t0));
}

Eigen::VectorXd spde_step(const SpdeSpec& spec, const Eigen::VectorXd& coeffs,
                          const LocalExcitationParams& gamma, double delta,
                          int n_sub, Rng& rng) {
  return spde_core(spec, coeffs, delta, n_sub, rng, gamma_eval(gamma));
}

Eigen::VectorXd spde_step_signal(const SpdeSpec& spec, const Eigen::VectorXd& coeffs,
                                 const ExcitationSignal& alpha, double t0,
                                 double delta, int n_sub, Rng& rng) {
  return spde_core(spec, coeffs, delta, n_sub, rng, signal_eval(alpha, t0));
}

Eigen::VectorXd BuiltinSystem::step(const Eigen::VectorXd& x,
                                    const LocalExcitationParams& gamma, Rng& rng,
                                    int n_sub) const {
  switch (kind) {
    case SystemKind::sde:
      return em_step(*sde, x, gamma, delta, n_sub, rng);
    case SystemKind::reaction: {
      Eigen::VectorXi xi = x.array().round().cast<int>();
      return mnrm_simulate(*reaction, xi, gamma, delta, rng).cast<double>();
    }
    case SystemKind::spde:
      return spde_step(*spde, x, gamma, delta, n_sub, rng);
  }
  throw ConfigError("unknown system kind");
}

Eigen::VectorXd BuiltinSystem::step_signal(const Eigen::VectorXd& x,
                                           const ExcitationSignal& u, double t0,
                                           Rng& rng, int n_sub) const {
  switch (kind) {
    case SystemKind::sde:
      return em_step_signal(*sde, x, u, t0, delta, n_sub, rng);
    case SystemKind::reaction: {
      Eigen::VectorXi xi = x.array().round().cast<int>();
      return mnrm_simulate_signal(*reaction, xi, u, t0, delta, rng).cast<double>();
    }
    case SystemKind::spde:
      return spde_step_signal(*spde, x, u, t0, delta, n_sub, rng);
  }
  throw ConfigError("unknown system kind");
}

// ---------------------------------------------------------------------------
// built-in example systems
// ---------------------------------------------------------------------------

namespace {

Box box_from(std::initializer_list<std::pair<double, double>> intervals) {
  Eigen::VectorXd lo(static_cast<Eigen::Index>(intervals.size()));
  Eigen::VectorXd hi(static_cast<Eigen::Index>(intervals.size()));
  Eigen::Index i = 0;
  for (const auto& [l, h] : intervals) {
    lo[i] = l;
    hi[i] = h;
    ++i;
  }
  return Box(std::move(lo), std::move(hi));
}

BuiltinSystem make_ou_drift() {
  BuiltinSystem sys;
  sys.name = "ou_drift";
  sys.kind = SystemKind::sde;
  sys.d = 1;
  sys.n_u = 1;
  sys.delta = 0.01;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.x_domain = box_from({{-2.0, 2.0}});
  sys.gamma_domain = box_from({{-9.0, 9.0}, {-9.0, 9.0}, {-9.0, 9.0}});
  SdeSpec sde;
  sde.d = 1;
  sde.m_noise = 1;
  sde.n_u = 1;
  sde.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(1, -x[0] + u[0]);
  };
  sde.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(1, 1, 0.2);
  };
  sys.sde = std::move(sde);
  return sys;
}

BuiltinSystem make_ou_full() {
  BuiltinSystem sys;
  sys.name = "ou_full";
  sys.kind = SystemKind::sde;
  sys.d = 1;
  sys.n_u = 2;  // u = (alpha, beta)
  sys.delta = 0.01;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.x_domain = box_from({{-0.8, 1.5}});
  sys.gamma_domain = box_from({{-0.6, 0.6},
                               {-0.8, 0.8},
                               {-0.7, 0.7},
                               {0.01, 0.35},
                               {-0.5, 0.5},
                               {-1.55, 0.55}});
  SdeSpec sde;
  sde.d = 1;
  sde.m_noise = 1;
  sde.n_u = 2;
  sde.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(1, -x[0] + u[0]);
  };
  sde.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd& u) {
    return Eigen::MatrixXd::Constant(1, 1, u[1]);
  };
  sys.sde = std::move(sde);
  return sys;
}

BuiltinSystem make_nonlinear2d() {
  BuiltinSystem sys;
  sys.name = "nonlinear2d";
  sys.kind = SystemKind::sde;
  sys.d = 2;
  sys.n_u = 1;
  sys.delta = 0.01;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.x_domain = box_from({{-1.5, 2.0}, {-1.0, 1.6}});
  sys.gamma_domain = box_from({{-2.0, 2.0}, {-8.0, 8.0}, {-15.0, 15.0}});
  SdeSpec sde;
  sde.d = 2;
  sde.m_noise = 2;
  sde.n_u = 1;
  sde.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd a(2);
    a[0] = -x[1] * x[1] * x[1] + u[0];
    a[1] = -(x[1] - x[0]);
    return a;
  };
  sde.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
    b(0, 0) = 0.2;
    b(1, 1) = 0.05;
    return b;
  };
  sys.sde = std::move(sde);
  return sys;
}

BuiltinSystem make_lotka_volterra() {
  BuiltinSystem sys;
  sys.name = "lotka_volterra";
  sys.kind = SystemKind::sde;
  sys.d = 2;
  sys.n_u = 1;
  sys.delta = 0.01;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.x_domain = box_from({{0.1, 0.35}, {0.2, 5.5}});
  sys.gamma_domain = box_from({{0.01, 4.2}, {-1.5, 1.5}, {-0.7, 0.7}});
  SdeSpec sde;
  sde.d = 2;
  sde.m_noise = 2;
  sde.n_u = 1;
  sde.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd a(2);
    a[0] = x[0] - x[0] * x[1] + u[0];
    a[1] = -x[1] + x[0] * x[1];
    return a;
  };
  sde.diffusion = [](const Eigen::VectorXd& x, const Eigen::VectorXd&) {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(2, 2);
    b(0, 0) = 0.05 * x[0];
    b(1, 1) = 0.05 * x[1];
    return b;
  };
  sys.sde = std::move(sde);
  return sys;
}

BuiltinSystem make_double_well() {
  BuiltinSystem sys;
  sys.name = "double_well";
  sys.kind = SystemKind::sde;
  sys.d = 1;
  sys.n_u = 1;
  sys.delta = 0.01;
  sys.basis = BasisSpec::piecewise_constant(sys.delta);
  sys.x_domain = box_from({{-1.6, 1.6}});
  sys.gamma_domain = box_from({{-0.13, 0.13}});
  SdeSpec sde;
  sde.d = 1;
  sde.m_noise = 1;
  sde.n_u = 1;
  sde.drift = [](const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
    return Eigen::VectorXd::Constant(1, x[0] - x[0] * x[0] * x[0] + u[0]);
  };
  sde.diffusion = [](const Eigen::VectorXd&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd::Constant(1, 1, 0.25);
  };
  sys.sde = std::move(sde);
  return sys;
}

BuiltinSystem make_gene_expression() {
  BuiltinSystem sys;
  sys.name = "gene_expression";
  sys.kind = SystemKind::reaction;
  sys.d = 2;  // (mRNA, protein)
  sys.n_u = 1;
  sys.integer_state = true;
  sys.delta = 0.1;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.x_domain = box_from({{0.0, 10.0}, {0.0, 400.0}});
  sys.gamma_domain = box_from({{0.0, 40.0}, {-5.3, 5.3}, {-0.7, 0.7}});
  ReactionNetworkSpec net;
  net.n_species = 2;
  net.n_u = 1;
  net.stoichiometry.resize(4, 2);
  net.stoichiometry << 1, 0,   // 0 -> M, rate k(t)
                       0, 1,   // M -> M + P, rate ks * M
                      -1, 0,   // M -> 0, rate kdm * M
                       0, -1;  // P -> 0, rate kdp * P
  constexpr double ks = 500.0, kdm = 20.0, kdp = 5.0;
  net.propensity = [](const Eigen::VectorXi& x, const Eigen::VectorXd& u) {
    Eigen::VectorXd r(4);
    r[0] = std::max(u[0], 0.0);  // sampled excitations may dip below zero
    r[1] = ks * x[0];
    r[2] = kdm * x[0];
    r[3] = kdp * x[1];
    return r;
  };
  sys.reaction = std::move(net);
  return sys;
}

BuiltinSystem make_stochastic_heat() {
  BuiltinSystem sys;
  sys.name = "stochastic_heat";
  sys.kind = SystemKind::spde;
  sys.n_u = 1;
  sys.delta = 0.05;
  sys.basis = BasisSpec::monomial(3, sys.delta);
  sys.gamma_domain = box_from({{-1.2, 1.2}, {-3.5, 3.5}, {-5.0, 5.0}});
  SpdeSpec spde;
  spde.n_modes = 30;
  spde.eps = 0.1;
  spde.p = 1.0;
  spde.q = 1.0;
  spde.sigma = 0.05;
  sys.d = spde.dim();
  // modal sampling box: half-width shrinking with the wavenumber so sampled
  // initial fields are smooth
  Eigen::VectorXd hw(sys.d);
  for (int j = 0; j < sys.d; ++j) {
    const double k = spde.wavenumber(j);
    hw[j] = 2.0 / ((1.0 + k) * (1.0 + k));
  }
  sys.x_domain = Box(-hw, hw);
  sys.spde = std::move(spde);
  return sys;
}

}  // namespace

std::vector<std::string> builtin_system_names() {
  return {"ou_drift",    "ou_full",         "nonlinear2d",    "lotka_volterra",
          "double_well", "gene_expression", "stochastic_heat"};
}

BuiltinSystem builtin_system(const std::string& name) {
  if (name == "ou_drift") return make_ou_drift();
  if (name == "ou_full") return make_ou_full();
  if (name == "nonlinear2d") return make_nonlinear2d();
  if (name == "lotka_volterra") return make_lotka_volterra();
  if (name == "double_well") return make_double_well();
  if (name == "gene_expression") return make_gene_expression();
  if (name == "stochastic_heat") return make_stochastic_heat();
  std::ostringstream msg;
  msg << "unknown system \"" << name << "\"; valid names:";
  for (const auto& n : builtin_system_names()) msg << " " << n;
  throw ConfigError(msg.str());
}

MomentCurves ou_moment_oracle(double mu, double sigma, const ExcitationSignal& alpha,
                              double x0, const Eigen::VectorXd& t_grid) {
  if (t_grid.size() < 1 || t_grid[0] < 0.0) {
    throw ConfigError("oracle time grid must start at t >= 0");
  }
  for (Eigen::Index i = 1; i < t_grid.size(); ++i) {
    if (!(t_grid[i] > t_grid[i - 1])) {
      throw ConfigError("oracle time grid must be increasing");
    }
  }
  MomentCurves out;
  out.t = t_grid;
  out.mean.resize(t_grid.size());
  out.variance.resize(t_grid.size());

  // RK4 on (m, v): m' = -mu m + alpha(t), v' = -2 mu v + sigma^2
  double t = 0.0, m = x0, v = 0.0;
  auto fm = [&](double tt, double mm) { return -mu * mm + alpha.eval(tt)[0]; };
  auto fv = [&](double vv) { return -2.0 * mu * vv + sigma * sigma; };
  constexpr double max_h = 1e-3;
  for (Eigen::Index i = 0; i < t_grid.size(); ++i) {
    const double target = t_grid[i];
    const double span = target - t;
    if (span > 0.0) {
      const auto n = static_cast<std::int64_t>(std::ceil(span / max_h));
      const double h = span / static_cast<double>(n);
      for (std::int64_t s = 0; s < n; ++s) {
        const double k1m = fm(t, m), k1v = fv(v);
        const double k2m = fm(t + 0.5 * h, m + 0.5 * h * k1m), k2v = fv(v + 0.5 * h * k1v);
        const double k3m = fm(t + 0.5 * h, m + 0.5 * h * k2m), k3v = fv(v + 0.5 * h * k2v);
        const double k4m = fm(t + h, m + h * k3m), k4v = fv(v + h * k3v);
        m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        t += h;
      }
      t = target;  // absorb accumulated rounding
    }
    out.mean[i] = m;
    out.variance[i] = v;
  }
  return out;
}

}  // namespace sfml
