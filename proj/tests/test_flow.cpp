#include <doctest.h>

#include <Eigen/LU>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "sfml/flow.hpp"

using namespace sfml;

namespace {

void randomize_weights(FlowModel& flow, double scale, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd w = flow.get_weights();
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = rng.uniform(-scale, scale);
  flow.set_weights(w);
}

Eigen::VectorXd random_vec(int n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("freshly built flows are the identity") {
  FlowConfig cfg;  // K = 5: permutations compose to the identity
  FlowModel flow = build_flow_raw(2, 1, cfg, 42);
  Rng rng(1);
  const Eigen::VectorXd x0 = random_vec(2, rng);
  const Eigen::VectorXd gamma = random_vec(1, rng);
  const Eigen::VectorXd z = random_vec(2, rng);
  CHECK(forward_T(flow, z, x0, gamma) == z);

  // K = 2 composes one reversal
  FlowConfig two;
  two.n_layers = 2;
  FlowModel flow2 = build_flow_raw(3, 1, two, 42);
  const Eigen::VectorXd z3 = random_vec(3, rng);
  const Eigen::VectorXd y3 = forward_T(flow2, z3, random_vec(3, rng), gamma);
  CHECK(y3[0] == z3[2]);
  CHECK(y3[1] == z3[1]);
  CHECK(y3[2] == z3[0]);
}

TEST_CASE("a forced affine layer maps 0.5 to 4 and back") {
  FlowConfig cfg;
  cfg.n_layers = 1;
  FlowModel flow = build_flow_raw(1, 1, cfg, 0);
  // final linear layer bias holds [s_raw, t]; undo the tanh clamp so the
  // effective log-scale is exactly log 2
  const double s_raw = cfg.log_scale_clamp * std::atanh(std::log(2.0) / cfg.log_scale_clamp);
  flow.layers[0].biases.back() << s_raw, 3.0;

  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd gamma = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd z = Eigen::VectorXd::Constant(1, 0.5);
  const Eigen::VectorXd x1 = forward_T(flow, z, x0, gamma);
  CHECK(x1[0] == doctest::Approx(4.0).epsilon(1e-12));

  const auto [z_back, logdet] = inverse_S(flow, x1, x0, gamma);
  CHECK(z_back[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(logdet == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("identity flow log-dets and log-probs") {
  FlowModel flow = build_flow_raw(1, 1, FlowConfig{}, 1);
  const Eigen::VectorXd zero1 = Eigen::VectorXd::Zero(1);
  const auto [z, logdet] = inverse_S(flow, zero1, zero1, zero1);
  CHECK(z == zero1);
  CHECK(logdet == 0.0);
  CHECK(log_prob(flow, zero1, zero1, zero1) == doctest::Approx(-0.9189385332).epsilon(1e-9));

  FlowModel flow2 = build_flow_raw(2, 1, FlowConfig{}, 1);
  const Eigen::VectorXd zero2 = Eigen::VectorXd::Zero(2);
  CHECK(log_prob(flow2, zero2, zero2, zero1) ==
        doctest::Approx(-1.8378770664).epsilon(1e-9));
}

TEST_CASE("invertibility for random weights") {
  Rng rng(7);
  for (const int d : {1, 2, 5}) {
    for (const int n_gamma : {1, 3}) {
      FlowModel flow = build_flow_raw(d, n_gamma, FlowConfig{}, 11);
      randomize_weights(flow, 0.8, 1000 + d);
      for (int rep = 0; rep < 20; ++rep) {
        const Eigen::VectorXd x0 = random_vec(d, rng);
        const Eigen::VectorXd gamma = random_vec(n_gamma, rng);
        const Eigen::VectorXd z = random_vec(d, rng, -3.0, 3.0);
        const auto [x1, ld_fwd] = forward_T_logdet(flow, z, x0, gamma);
        const auto [z_back, ld_inv] = inverse_S(flow, x1, x0, gamma);
        CHECK((z_back - z).cwiseAbs().maxCoeff() < 1e-6);
        CHECK(std::abs(ld_fwd + ld_inv) < 1e-8);
        // the other direction
        const Eigen::VectorXd x_any = random_vec(d, rng);
        const auto [z2, ld2] = inverse_S(flow, x_any, x0, gamma);
        const Eigen::VectorXd x_back = forward_T(flow, z2, x0, gamma);
        CHECK((x_back - x_any).cwiseAbs().maxCoeff() < 1e-6);
      }
    }
  }
}

TEST_CASE("inverse log-det matches a finite-difference Jacobian") {
  const int d = 3;
  FlowModel flow = build_flow_raw(d, 2, FlowConfig{}, 5);
  randomize_weights(flow, 0.7, 77);
  Rng rng(9);
  const Eigen::VectorXd x0 = random_vec(d, rng);
  const Eigen::VectorXd gamma = random_vec(2, rng);
  const Eigen::VectorXd x1 = random_vec(d, rng);

  Eigen::MatrixXd jac(d, d);
  const double h = 1e-5;
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd xp = x1, xm = x1;
    xp[j] += h;
    xm[j] -= h;
    jac.col(j) = (inverse_S(flow, xp, x0, gamma).first -
                  inverse_S(flow, xm, x0, gamma).first) /
                 (2.0 * h);
  }
  const double fd_logdet = std::log(std::abs(jac.determinant()));
  const double logdet = inverse_S(flow, x1, x0, gamma).second;
  CHECK(logdet == doctest::Approx(fd_logdet).epsilon(1e-4));
}

TEST_CASE("autoregressive masking orders the dependencies") {
  const int d = 4;
  FlowConfig cfg;
  cfg.n_layers = 1;  // identity permutation
  FlowModel flow = build_flow_raw(d, 2, cfg, 3);
  randomize_weights(flow, 0.9, 17);
  Rng rng(2);
  const Eigen::VectorXd x0 = random_vec(d, rng);
  const Eigen::VectorXd gamma = random_vec(2, rng);
  const Eigen::VectorXd z = random_vec(d, rng);

  const Eigen::VectorXd base = forward_T(flow, z, x0, gamma);
  for (int j = 0; j < d; ++j) {
    Eigen::VectorXd zp = z;
    zp[j] += 0.37;
    const Eigen::VectorXd out = forward_T(flow, zp, x0, gamma);
    for (int i = 0; i < j; ++i) CHECK(out[i] == base[i]);  // untouched before j
    CHECK(out[j] != base[j]);
  }

  // the first coordinate's conditional still responds to the context
  FlowModel ctx_flow = build_flow_raw(2, 1, cfg, 4);
  randomize_weights(ctx_flow, 0.9, 18);
  const Eigen::VectorXd z2 = random_vec(2, rng);
  const Eigen::VectorXd g1 = random_vec(1, rng);
  const Eigen::VectorXd g2 = g1.array() + 1.0;
  const Eigen::VectorXd a = forward_T(ctx_flow, z2, Eigen::VectorXd::Zero(2), g1);
  const Eigen::VectorXd b = forward_T(ctx_flow, z2, Eigen::VectorXd::Zero(2), g2);
  CHECK(a[0] != b[0]);
}

TEST_CASE("identity-flow samples are standard normal") {
  FlowModel flow = build_flow_raw(1, 1, FlowConfig{}, 6);
  Rng rng(123);
  const int n = 10000;
  const Eigen::MatrixXd s =
      sample(flow, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), n, rng);
  Eigen::VectorXd sorted = s.col(0);
  std::sort(sorted.data(), sorted.data() + n);
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = 0.5 * std::erfc(-sorted[i] / std::sqrt(2.0));
    ks = std::max(ks, std::abs(cdf - (i + 1.0) / n));
    ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
  }
  CHECK(ks < 1.63 / std::sqrt(static_cast<double>(n)));

  Rng r1(55), r2(55);
  const Eigen::MatrixXd a =
      sample(flow, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), 64, r1);
  const Eigen::MatrixXd b =
      sample(flow, Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(1), 64, r2);
  CHECK(a == b);
}

TEST_CASE("sampling is consistent with the density") {
  FlowModel flow = build_flow_raw(2, 1, FlowConfig{}, 8);
  randomize_weights(flow, 0.5, 21);
  Rng rng(31);
  const Eigen::VectorXd x0 = random_vec(2, rng);
  const Eigen::VectorXd gamma = random_vec(1, rng);

  const int n = 10000;
  auto mean_logprob = [&](std::uint64_t seed, double& se) {
    Rng r(seed);
    const Eigen::MatrixXd s = sample(flow, x0, gamma, n, r);
    Eigen::MatrixXd ctx(n, flow.ctx_dim());
    for (int i = 0; i < n; ++i) ctx.row(i) << x0.transpose(), gamma.transpose();
    const Eigen::VectorXd lp = log_prob_batch(flow, ctx, s);
    const double mean = lp.mean();
    se = std::sqrt((lp.array() - mean).square().sum() / (n - 1.0) / n);
    return mean;
  };
  double se1 = 0.0, se2 = 0.0;
  const double m1 = mean_logprob(1001, se1);
  const double m2 = mean_logprob(2002, se2);
  CHECK(std::abs(m1 - m2) < 3.0 * std::sqrt(se1 * se1 + se2 * se2));
}

TEST_CASE("d=1 conditional density integrates to one") {
  FlowModel flow = build_flow_raw(1, 2, FlowConfig{}, 9);
  randomize_weights(flow, 0.6, 33);
  Rng rng(77);
  const Eigen::VectorXd x0 = random_vec(1, rng);
  const Eigen::VectorXd gamma = random_vec(2, rng);

  Rng sr(5);
  const Eigen::MatrixXd s = sample(flow, x0, gamma, 4000, sr);
  const double mu = s.col(0).mean();
  const double sd = std::sqrt((s.col(0).array() - mu).square().sum() / (s.rows() - 1.0));

  const int n_quad = 40001;
  const double lo = mu - 10.0 * sd, hi = mu + 10.0 * sd;
  const double h = (hi - lo) / (n_quad - 1);
  double integral = 0.0;
  for (int i = 0; i < n_quad; ++i) {
    const double x = lo + h * i;
    const double p = std::exp(log_prob(flow, Eigen::VectorXd::Constant(1, x), x0, gamma));
    integral += (i == 0 || i == n_quad - 1) ? 0.5 * p : p;
  }
  integral *= h;
  CHECK(std::abs(integral - 1.0) < 1e-3);
}

TEST_CASE("normalization constants are folded into log_prob") {
  // a flow with non-trivial target stats must still integrate to one in
  // original units
  FlowModel flow = build_flow_raw(1, 1, FlowConfig{}, 10);
  flow.norm.target_shift << 3.0;
  flow.norm.target_scale << 2.5;
  const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(1);
  const Eigen::VectorXd gamma = Eigen::VectorXd::Zero(1);
  // identity layers: density is N(3, 2.5^2)
  const double at_mode = log_prob(flow, Eigen::VectorXd::Constant(1, 3.0), x0, gamma);
  CHECK(at_mode == doctest::Approx(-0.9189385332 - std::log(2.5)).epsilon(1e-9));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  const auto sys = builtin_system("ou_drift");
  TrainingSet set = generate_training_set(sys, 100, 13, 1);
  FlowModel flow = build_flow(set, FlowConfig{}, 321);
  randomize_weights(flow, 0.4, 55);

  namespace fs = std::filesystem;
  const auto p1 = (fs::temp_directory_path() / "sfml_ckpt_a.bin").string();
  const auto p2 = (fs::temp_directory_path() / "sfml_ckpt_b.bin").string();
  save_flow(flow, p1);
  save_flow(flow, p2);
  CHECK(slurp(p1) == slurp(p2));

  const FlowModel back = load_flow(p1);
  CHECK(back.get_weights() == flow.get_weights());
  CHECK(back.d == flow.d);
  CHECK(back.n_gamma == flow.n_gamma);
  CHECK(back.norm.ctx_shift == flow.norm.ctx_shift);
  CHECK(back.norm.target_scale == flow.norm.target_scale);
  CHECK(back.meta.basis.family == flow.meta.basis.family);
  CHECK(back.meta.basis.m == flow.meta.basis.m);
  CHECK(back.meta.delta == flow.meta.delta);
  CHECK(back.meta.system_name == "ou_drift");
  CHECK(back.meta.x_domain.lo == flow.meta.x_domain.lo);
  CHECK(back.perms == flow.perms);

  save_flow(back, p2);
  CHECK(slurp(p1) == slurp(p2));

  // behavioral identity
  Rng rng(2);
  const Eigen::VectorXd x0 = random_vec(1, rng);
  const Eigen::VectorXd gamma = random_vec(3, rng);
  const Eigen::VectorXd x1 = random_vec(1, rng);
  CHECK(log_prob(back, x1, x0, gamma) == log_prob(flow, x1, x0, gamma));

  // corrupt magic is rejected
  {
    std::string bytes = slurp(p1);
    bytes[1] = 'Z';
    std::ofstream out(p1, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  CHECK_THROWS_AS(load_flow(p1), FormatError);
}
