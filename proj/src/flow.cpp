#include "sfml/flow.hpp"

#include <cmath>
#include <fstream>

#include "sfml/detail/binio.hpp"

namespace sfml {

namespace {
constexpr double kLn2Pi = 1.8378770664093454836;

// tanh through Eigen's vectorized exp; several times faster than the scalar
// libm call on double batches and exact at the +-1 saturation limits.
template <typename Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}
}

// ---------------------------------------------------------------------------
// MadeNet
// ---------------------------------------------------------------------------

namespace {

// Degree of hidden unit h: cycles through 0..d-1. Degree-0 units read only
// the context.
int hidden_degree(int h, int d) { return d > 1 ? h % d : 0; }

}  // namespace

void MadeNet::init(int ar_dim_, int ctx_dim_, const std::vector<int>& hidden, Rng& rng) {
  ar_dim = ar_dim_;
  ctx_dim = ctx_dim_;
  weights.clear();
  biases.clear();
  masks.clear();

  std::vector<int> widths;
  widths.push_back(ar_dim + ctx_dim);
  for (int h : hidden) widths.push_back(h);
  widths.push_back(2 * ar_dim);

  const int n_linear = static_cast<int>(widths.size()) - 1;
  for (int l = 0; l < n_linear; ++l) {
    const int in = widths[l];
    const int out = widths[l + 1];
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(out, in);

    for (int o = 0; o < out; ++o) {
      // degree of the receiving unit
      const bool is_output = (l == n_linear - 1);
      const int recv = is_output ? (o % ar_dim) + 1  // output rows for s_i/t_i carry degree i
                                 : hidden_degree(o, ar_dim);
      for (int i = 0; i < in; ++i) {
        int send;
        if (l == 0) {
          send = (i < ar_dim) ? i + 1 : 0;  // AR input i has degree i+1, context 0
        } else {
          send = hidden_degree(i, ar_dim);
        }
        const bool keep = is_output ? (send < recv) : (send <= recv);
        if (keep) mask(o, i) = 1.0;
      }
    }

    Eigen::MatrixXd W(out, in);
    if (l == n_linear - 1) {
      W.setZero();  // identity flow at init
    } else {
      const double a = std::sqrt(6.0 / (in + out));
      for (int o = 0; o < out; ++o) {
        for (int i = 0; i < in; ++i) W(o, i) = rng.uniform(-a, a);
      }
      W.array() *= mask.array();
    }
    weights.push_back(std::move(W));
    biases.push_back(Eigen::VectorXd::Zero(out));
    masks.push_back(std::move(mask));
  }
}

Eigen::MatrixXd MadeNet::forward(const Eigen::MatrixXd& ar,
                                 const Eigen::MatrixXd& ctx) const {
  Cache scratch;
  return forward_cached(ar, ctx, scratch);
}

Eigen::MatrixXd MadeNet::forward_cached(const Eigen::MatrixXd& ar,
                                        const Eigen::MatrixXd& ctx,
                                        Cache& cache) const {
  const auto B = ar.rows();
  Eigen::MatrixXd h(B, ar.cols() + ctx.cols());
  h << ar, ctx;
  cache.inputs.clear();
  cache.inputs.reserve(weights.size());
  const int n_linear = static_cast<int>(weights.size());
  for (int l = 0; l < n_linear; ++l) {
    cache.inputs.push_back(h);
    Eigen::MatrixXd pre = h * (weights[l].cwiseProduct(masks[l])).transpose();
    pre.rowwise() += biases[l].transpose();
    if (l + 1 < n_linear) {
      h = fast_tanh(pre.array()).matrix();
    } else {
      h = std::move(pre);
    }
  }
  return h;
}

void MadeNet::backward(const Cache& cache, const Eigen::MatrixXd& d_out, double* grad,
                       Eigen::MatrixXd* d_ar) const {
  const int n_linear = static_cast<int>(weights.size());
  // offsets of each linear layer inside this net's gradient segment
  std::vector<std::int64_t> offset(n_linear + 1, 0);
  for (int l = 0; l < n_linear; ++l) {
    offset[l + 1] = offset[l] + weights[l].size() + biases[l].size();
  }

  Eigen::MatrixXd g = d_out;
  for (int l = n_linear - 1; l >= 0; --l) {
    const Eigen::MatrixXd& in = cache.inputs[l];
    Eigen::MatrixXd dW = (g.transpose() * in).cwiseProduct(masks[l]);
    Eigen::VectorXd db = g.colwise().sum();
    double* seg = grad + offset[l];
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        seg, dW.rows(), dW.cols()) +=
        dW;
    Eigen::Map<Eigen::VectorXd>(seg + dW.size(), db.size()) += db;
    if (l == 0) {
      if (d_ar) {
        Eigen::MatrixXd din = g * weights[l].cwiseProduct(masks[l]);
        *d_ar += din.leftCols(ar_dim);
      }
    } else {
      Eigen::MatrixXd din = g * weights[l].cwiseProduct(masks[l]);
      // inputs[l] holds tanh activations of layer l-1
      g = din.cwiseProduct((1.0 - in.array().square()).matrix());
    }
  }
}

std::int64_t MadeNet::n_params() const {
  std::int64_t n = 0;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    n += weights[l].size() + biases[l].size();
  }
  return n;
}

// ---------------------------------------------------------------------------
// FlowModel construction and parameter plumbing
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<int>> make_perms(int d, int n_layers) {
  std::vector<std::vector<int>> perms(n_layers);
  for (int k = 0; k < n_layers; ++k) {
    perms[k].resize(d);
    for (int i = 0; i < d; ++i) {
      perms[k][i] = (k % 2 == 0) ? i : d - 1 - i;
    }
  }
  return perms;
}

FlowModel make_flow(int d, int n_gamma, const FlowConfig& cfg, std::uint64_t seed) {
  if (d < 1) throw ConfigError("flow dimension must be >= 1");
  if (cfg.n_layers < 1) throw ConfigError("flow needs at least one layer");
  if (!(cfg.log_scale_clamp > 0.0)) throw ConfigError("log-scale clamp must be positive");
  FlowModel flow;
  flow.d = d;
  flow.n_gamma = n_gamma;
  flow.cfg = cfg;
  flow.norm = NormStats::identity(d, n_gamma);
  flow.perms = make_perms(d, cfg.n_layers);
  flow.layers.resize(cfg.n_layers);
  Rng rng(seed);
  for (int k = 0; k < cfg.n_layers; ++k) {
    flow.layers[k].init(d, d + n_gamma, cfg.hidden, rng);
  }
  return flow;
}

}  // namespace

FlowModel build_flow_raw(int d, int n_gamma, const FlowConfig& cfg, std::uint64_t seed) {
  return make_flow(d, n_gamma, cfg, seed);
}

FlowModel build_flow(const TrainingSet& set, const FlowConfig& cfg, std::uint64_t seed) {
  set.meta.validate();
  FlowModel flow = make_flow(set.meta.d, set.meta.n_gamma, cfg, seed);
  flow.norm = compute_norm_stats(set);
  flow.meta.basis = set.meta.basis;
  flow.meta.n_u = set.meta.n_u;
  flow.meta.delta = set.meta.delta;
  flow.meta.x_domain = set.meta.x_domain;
  flow.meta.system_name = set.meta.system_name;
  flow.meta.integer_state = set.meta.integer_state;
  return flow;
}

std::int64_t FlowModel::n_params() const {
  std::int64_t n = 0;
  for (const auto& net : layers) n += net.n_params();
  return n;
}

Eigen::VectorXd FlowModel::get_weights() const {
  Eigen::VectorXd w(n_params());
  std::int64_t at = 0;
  for (const auto& net : layers) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      const auto& W = net.weights[l];
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        for (Eigen::Index c = 0; c < W.cols(); ++c) w[at++] = W(r, c);
      }
      const auto& b = net.biases[l];
      for (Eigen::Index i = 0; i < b.size(); ++i) w[at++] = b[i];
    }
  }
  return w;
}

void FlowModel::set_weights(const Eigen::VectorXd& w) {
  if (w.size() != n_params()) {
    throw ConfigError("weight vector has " + std::to_string(w.size()) +
                      " entries, expected " + std::to_string(n_params()));
  }
  std::int64_t at = 0;
  for (auto& net : layers) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      auto& W = net.weights[l];
      for (Eigen::Index r = 0; r < W.rows(); ++r) {
        for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = w[at++];
      }
      auto& b = net.biases[l];
      for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = w[at++];
    }
  }
}

Eigen::VectorXd FlowModel::weight_decay_mask() const {
  Eigen::VectorXd m(n_params());
  std::int64_t at = 0;
  for (const auto& net : layers) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      m.segment(at, net.weights[l].size()).setOnes();
      at += net.weights[l].size();
      m.segment(at, net.biases[l].size()).setZero();
      at += net.biases[l].size();
    }
  }
  return m;
}

Eigen::VectorXd FlowModel::standardize_ctx(const Eigen::VectorXd& x0,
                                           const Eigen::VectorXd& gamma) const {
  if (x0.size() != d || gamma.size() != n_gamma) {
    throw ConfigError("conditioning input has dimensions (" + std::to_string(x0.size()) +
                      ", " + std::to_string(gamma.size()) + "), expected (" +
                      std::to_string(d) + ", " + std::to_string(n_gamma) + ")");
  }
  Eigen::VectorXd ctx(ctx_dim());
  ctx << x0, gamma;
  return (ctx - norm.ctx_shift).cwiseQuotient(norm.ctx_scale);
}

// ---------------------------------------------------------------------------
// Core passes (standardized space). Layer k forward: permute the input, then
// y_i = a_i * exp(s_i) + t_i with (s, t) conditioned on (y_{<i}, ctx).
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd clamp_scale(const Eigen::MatrixXd& s_raw, double clamp) {
  return (clamp * fast_tanh(s_raw.array() / clamp)).matrix();
}

// density direction: standardized target -> base, accumulating -sum(s)
// per row into logdet (which must arrive zero-initialized or pre-loaded).
Eigen::MatrixXd inverse_pass(const FlowModel& flow, const Eigen::MatrixXd& y_std,
                             const Eigen::MatrixXd& ctx, Eigen::VectorXd& logdet) {
  const int d = flow.d;
  Eigen::MatrixXd v = y_std;
  for (int k = flow.cfg.n_layers - 1; k >= 0; --k) {
    const Eigen::MatrixXd out = flow.layers[k].forward(v, ctx);
    const Eigen::MatrixXd s = clamp_scale(out.leftCols(d), flow.cfg.log_scale_clamp);
    const Eigen::MatrixXd u =
        (v - out.rightCols(d)).cwiseProduct((-s.array()).exp().matrix());
    logdet -= s.rowwise().sum();
    Eigen::MatrixXd prev(v.rows(), d);
    for (int i = 0; i < d; ++i) prev.col(flow.perms[k][i]) = u.col(i);
    v = std::move(prev);
  }
  return v;
}

// sampling direction: base -> standardized target; optionally accumulates
// +sum(s) per row.
Eigen::MatrixXd forward_pass(const FlowModel& flow, const Eigen::MatrixXd& z,
                             const Eigen::MatrixXd& ctx, Eigen::VectorXd* logdet,
                             bool check_layers) {
  const int d = flow.d;
  Eigen::MatrixXd a = z;
  for (int k = 0; k < flow.cfg.n_layers; ++k) {
    Eigen::MatrixXd perm_in(a.rows(), d);
    for (int i = 0; i < d; ++i) perm_in.col(i) = a.col(flow.perms[k][i]);
    Eigen::MatrixXd y = Eigen::MatrixXd::Zero(a.rows(), d);
    for (int i = 0; i < d; ++i) {
      const Eigen::MatrixXd out = flow.layers[k].forward(y, ctx);
      const Eigen::ArrayXd s =
          flow.cfg.log_scale_clamp *
          fast_tanh(out.col(i).array() / flow.cfg.log_scale_clamp);
      y.col(i) = (perm_in.col(i).array() * s.exp() + out.col(d + i).array()).matrix();
      if (logdet) *logdet += s.matrix();
    }
    if (check_layers && !y.allFinite()) {
      throw NumericError("forward transform produced a non-finite value in layer " +
                         std::to_string(k));
    }
    a = std::move(y);
  }
  return a;
}

Eigen::MatrixXd ctx_rows_std(const FlowModel& flow, const Eigen::MatrixXd& ctx_raw) {
  Eigen::MatrixXd ctx = ctx_raw;
  ctx.rowwise() -= flow.norm.ctx_shift.transpose();
  ctx.array().rowwise() /= flow.norm.ctx_scale.transpose().array();
  return ctx;
}

Eigen::MatrixXd target_rows_std(const FlowModel& flow, const Eigen::MatrixXd& x1_raw) {
  Eigen::MatrixXd y = x1_raw;
  y.rowwise() -= flow.norm.target_shift.transpose();
  y.array().rowwise() /= flow.norm.target_scale.transpose().array();
  return y;
}

}  // namespace

Eigen::VectorXd forward_T(const FlowModel& flow, const Eigen::VectorXd& z,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& gamma) {
  return forward_T_logdet(flow, z, x0, gamma).first;
}

std::pair<Eigen::VectorXd, double> forward_T_logdet(const FlowModel& flow,
                                                    const Eigen::VectorXd& z,
                                                    const Eigen::VectorXd& x0,
                                                    const Eigen::VectorXd& gamma) {
  if (z.size() != flow.d) throw ConfigError("base sample has wrong dimension");
  const Eigen::MatrixXd ctx = flow.standardize_ctx(x0, gamma).transpose();
  Eigen::VectorXd logdet = Eigen::VectorXd::Zero(1);
  const Eigen::MatrixXd y = forward_pass(flow, z.transpose(), ctx, &logdet, true);
  Eigen::VectorXd x1 =
      (y.row(0).transpose().cwiseProduct(flow.norm.target_scale)) + flow.norm.target_shift;
  return {x1, logdet[0]};
}

std::pair<Eigen::VectorXd, double> inverse_S(const FlowModel& flow,
                                             const Eigen::VectorXd& x1,
                                             const Eigen::VectorXd& x0,
                                             const Eigen::VectorXd& gamma) {
  if (x1.size() != flow.d) throw ConfigError("target has wrong dimension");
  const Eigen::MatrixXd ctx = flow.standardize_ctx(x0, gamma).transpose();
  const Eigen::MatrixXd y = target_rows_std(flow, x1.transpose());
  Eigen::VectorXd logdet = Eigen::VectorXd::Zero(1);
  const Eigen::MatrixXd z = inverse_pass(flow, y, ctx, logdet);
  if (!z.allFinite()) throw NumericError("inverse transform produced a non-finite value");
  return {z.row(0).transpose(), logdet[0]};
}

double log_prob(const FlowModel& flow, const Eigen::VectorXd& x1,
                const Eigen::VectorXd& x0, const Eigen::VectorXd& gamma) {
  Eigen::MatrixXd ctx_raw(1, flow.ctx_dim());
  ctx_raw << x0.transpose(), gamma.transpose();
  return log_prob_batch(flow, ctx_raw, x1.transpose())[0];
}

Eigen::VectorXd log_prob_batch(const FlowModel& flow, const Eigen::MatrixXd& ctx_raw,
                               const Eigen::MatrixXd& x1_raw) {
  if (ctx_raw.cols() != flow.ctx_dim() || x1_raw.cols() != flow.d ||
      ctx_raw.rows() != x1_raw.rows()) {
    throw ConfigError("log_prob batch has mismatched dimensions");
  }
  const Eigen::MatrixXd ctx = ctx_rows_std(flow, ctx_raw);
  const Eigen::MatrixXd y = target_rows_std(flow, x1_raw);
  Eigen::VectorXd logdet = Eigen::VectorXd::Zero(y.rows());
  const Eigen::MatrixXd z = inverse_pass(flow, y, ctx, logdet);
  const double norm_const = flow.norm.target_scale.array().log().sum();
  return (-0.5 * z.array().square().rowwise().sum() -
          0.5 * kLn2Pi * flow.d + logdet.array() - norm_const)
      .matrix();
}

Eigen::MatrixXd sample(const FlowModel& flow, const Eigen::VectorXd& x0,
                       const Eigen::VectorXd& gamma, int n, Rng& rng) {
  if (n < 1) throw ConfigError("sample count must be >= 1");
  Eigen::MatrixXd z(n, flow.d);
  for (int r = 0; r < n; ++r) {
    for (int i = 0; i < flow.d; ++i) z(r, i) = rng.normal();
  }
  const Eigen::VectorXd ctx1 = flow.standardize_ctx(x0, gamma);
  const Eigen::MatrixXd ctx = ctx1.transpose().replicate(n, 1);
  Eigen::MatrixXd y = forward_pass(flow, z, ctx, nullptr, false);
  if (!y.allFinite()) throw NumericError("sampling produced non-finite values");
  y.array().rowwise() *= flow.norm.target_scale.transpose().array();
  y.rowwise() += flow.norm.target_shift.transpose();
  return y;
}

// ---------------------------------------------------------------------------
// Gradient of the mean NLL. The math mirrors inverse_pass. All buffers live
// in a reusable scratch (one workspace per fixed-size batch chunk), so the
// reduction order is independent of the thread count and the hot loop does
// not allocate after the first iteration.
// ---------------------------------------------------------------------------

namespace {

struct LayerWs {
  std::vector<Eigen::MatrixXd> inputs;  // input of each masked linear
  Eigen::MatrixXd out;                  // conditioner output [s_raw | t]
  Eigen::MatrixXd s, u, e;              // clamped log-scale, scaled residual, exp(-s)
};

struct ChunkWs {
  Eigen::VectorXd grad;
  double loss = 0.0;
  std::vector<LayerWs> layers;
  Eigen::MatrixXd v, swap, g_u, g_v, g_out, lin, dW;
};

}  // namespace

struct NllScratch {
  std::vector<std::vector<Eigen::MatrixXd>> masked;  // [flow layer][linear]
  Eigen::MatrixXd ctx, y;
  std::vector<ChunkWs> chunks;
};

std::shared_ptr<NllScratch> make_nll_scratch() {
  return std::make_shared<NllScratch>();
}

namespace {

// forward through one conditioner, caching each linear's input in ws
void made_forward_ws(const MadeNet& net, const std::vector<Eigen::MatrixXd>& masked,
                     const Eigen::MatrixXd& ar, const Eigen::MatrixXd& ctx,
                     LayerWs& ws, Eigen::MatrixXd& lin) {
  const int n_linear = static_cast<int>(net.weights.size());
  ws.inputs.resize(n_linear);
  ws.inputs[0].resize(ar.rows(), ar.cols() + ctx.cols());
  ws.inputs[0].leftCols(ar.cols()) = ar;
  ws.inputs[0].rightCols(ctx.cols()) = ctx;
  for (int l = 0; l < n_linear; ++l) {
    Eigen::MatrixXd& target = (l + 1 < n_linear) ? ws.inputs[l + 1] : ws.out;
    lin.resize(ar.rows(), masked[l].rows());
    lin.noalias() = ws.inputs[l] * masked[l].transpose();
    lin.rowwise() += net.biases[l].transpose();
    if (l + 1 < n_linear) {
      target = fast_tanh(lin.array()).matrix();
    } else {
      target = lin;
    }
  }
}

// backprop through one conditioner; parameter gradients go into `grad`
// (same layout as flatten), d(loss)/d(ar inputs) is added to *d_ar
void made_backward_ws(const MadeNet& net, const std::vector<Eigen::MatrixXd>& masked,
                      LayerWs& ws, Eigen::MatrixXd& g, double* grad,
                      Eigen::MatrixXd* d_ar, Eigen::MatrixXd& lin,
                      Eigen::MatrixXd& dW) {
  const int n_linear = static_cast<int>(net.weights.size());
  std::vector<std::int64_t> offset(n_linear + 1, 0);
  for (int l = 0; l < n_linear; ++l) {
    offset[l + 1] = offset[l] + net.weights[l].size() + net.biases[l].size();
  }
  for (int l = n_linear - 1; l >= 0; --l) {
    const Eigen::MatrixXd& in = ws.inputs[l];
    dW.resize(net.weights[l].rows(), net.weights[l].cols());
    dW.noalias() = g.transpose() * in;
    double* seg = grad + offset[l];
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        seg, dW.rows(), dW.cols())
        .array() += dW.array() * net.masks[l].array();
    Eigen::Map<Eigen::VectorXd>(seg + dW.size(), dW.rows()) +=
        g.colwise().sum().transpose();
    if (l == 0) {
      if (d_ar) {
        lin.resize(g.rows(), masked[0].cols());
        lin.noalias() = g * masked[0];
        *d_ar += lin.leftCols(net.ar_dim);
      }
    } else {
      lin.resize(g.rows(), masked[l].cols());
      lin.noalias() = g * masked[l];
      // inputs[l] holds tanh activations of linear l-1
      g.resize(lin.rows(), lin.cols());
      g.array() = lin.array() * (1.0 - in.array().square());
    }
  }
}

// Sum (not mean) of nll over the chunk's rows, with the parameter gradient
// of that sum accumulated into ws.grad. Row constants (base density and
// normalization) are added once by the caller.
void chunk_nll_grad(const FlowModel& flow, const NllScratch& scratch,
                    std::int64_t row_lo, std::int64_t rows, ChunkWs& ws) {
  const int d = flow.d;
  const int K = flow.cfg.n_layers;
  const double clamp = flow.cfg.log_scale_clamp;
  const auto ctx = scratch.ctx.middleRows(row_lo, rows);

  ws.layers.resize(K);
  ws.loss = 0.0;

  // density sweep: layer K-1 down to 0
  ws.v = scratch.y.middleRows(row_lo, rows);
  for (int k = K - 1; k >= 0; --k) {
    LayerWs& ld = ws.layers[k];
    made_forward_ws(flow.layers[k], scratch.masked[k], ws.v, ctx, ld, ws.lin);
    ld.s = (clamp * fast_tanh(ld.out.leftCols(d).array() / clamp)).matrix();
    ld.e = (-ld.s.array()).exp().matrix();
    ld.u = (ws.v - ld.out.rightCols(d)).cwiseProduct(ld.e);
    ws.loss += ld.s.sum();
    ws.swap.resize(rows, d);
    for (int i = 0; i < d; ++i) ws.swap.col(flow.perms[k][i]) = ld.u.col(i);
    ws.v.swap(ws.swap);
  }
  ws.loss += 0.5 * ws.v.array().square().sum();

  std::vector<std::int64_t> seg_offset(K + 1, 0);
  for (int k = 0; k < K; ++k) seg_offset[k + 1] = seg_offset[k] + flow.layers[k].n_params();

  // gradient sweep: layer 0 up to K-1; ws.v enters as z with d(loss)/dz = z
  for (int k = 0; k < K; ++k) {
    LayerWs& ld = ws.layers[k];
    ws.g_u.resize(rows, d);
    for (int i = 0; i < d; ++i) ws.g_u.col(i) = ws.v.col(flow.perms[k][i]);

    ws.g_out.resize(rows, 2 * d);
    // d(loss)/ds, including the +1 from the log-det term, then the clamp
    ws.g_out.leftCols(d).array() =
        (-ws.g_u.array() * ld.u.array() + 1.0) * (1.0 - (ld.s.array() / clamp).square());
    ws.g_out.rightCols(d).array() = -ws.g_u.array() * ld.e.array();
    ws.g_v.resize(rows, d);
    ws.g_v.array() = ws.g_u.array() * ld.e.array();

    made_backward_ws(flow.layers[k], scratch.masked[k], ld, ws.g_out,
                     ws.grad.data() + seg_offset[k], &ws.g_v, ws.lin, ws.dW);
    ws.v.swap(ws.g_v);
  }
}

}  // namespace

double nll_and_grad(const FlowModel& flow, const Eigen::MatrixXd& ctx_raw,
                    const Eigen::MatrixXd& x1_raw, Eigen::VectorXd& grad, int threads,
                    NllScratch* scratch) {
  const auto B = ctx_raw.rows();
  if (B == 0) throw TrainingError("empty batch");
  if (ctx_raw.cols() != flow.ctx_dim() || x1_raw.cols() != flow.d ||
      x1_raw.rows() != B) {
    throw ConfigError("nll batch has mismatched dimensions");
  }
  std::shared_ptr<NllScratch> local;
  if (!scratch) {
    local = make_nll_scratch();
    scratch = local.get();
  }
  scratch->ctx = ctx_rows_std(flow, ctx_raw);
  scratch->y = target_rows_std(flow, x1_raw);

  // masked weights are shared by every chunk and refreshed once per call
  const int K = flow.cfg.n_layers;
  scratch->masked.resize(K);
  for (int k = 0; k < K; ++k) {
    const MadeNet& net = flow.layers[k];
    scratch->masked[k].resize(net.weights.size());
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      scratch->masked[k][l] = net.weights[l].cwiseProduct(net.masks[l]);
    }
  }

  const std::int64_t n_params = flow.n_params();
  constexpr std::int64_t kChunk = 256;
  const std::int64_t n_chunks = (B + kChunk - 1) / kChunk;
  scratch->chunks.resize(n_chunks);

  parallel_for(
      n_chunks, threads,
      [&](std::int64_t c) {
        ChunkWs& ws = scratch->chunks[c];
        if (ws.grad.size() != n_params) ws.grad.resize(n_params);
        ws.grad.setZero();
        const std::int64_t lo = c * kChunk;
        chunk_nll_grad(flow, *scratch, lo, std::min<std::int64_t>(kChunk, B - lo), ws);
      },
      /*chunk=*/1);

  grad = Eigen::VectorXd::Zero(n_params);
  double loss = 0.0;
  for (std::int64_t c = 0; c < n_chunks; ++c) {
    grad += scratch->chunks[c].grad;
    loss += scratch->chunks[c].loss;
  }
  const double inv_b = 1.0 / static_cast<double>(B);
  grad *= inv_b;
  loss = loss * inv_b + 0.5 * kLn2Pi * flow.d +
         flow.norm.target_scale.array().log().sum();
  return loss;
}

// ---------------------------------------------------------------------------
// checkpoint payload
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[4] = {'S', 'F', 'M', 'C'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

namespace detail {

void write_flow_payload(std::ostream& out, const FlowModel& flow) {
  write_bytes(out, kMagic, 4);
  write_pod<std::uint32_t>(out, kVersion);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.cfg.n_layers));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.d));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.meta.n_u));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.n_gamma));
  write_pod<std::uint8_t>(out, static_cast<std::uint8_t>(flow.meta.basis.family));
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.meta.basis.m));
  write_pod<double>(out, flow.meta.delta);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.cfg.hidden.size()));
  for (int h : flow.cfg.hidden) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(h));
  write_pod<double>(out, flow.cfg.log_scale_clamp);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.norm.ctx_shift.size()));
  write_vec(out, flow.norm.ctx_shift);
  write_vec(out, flow.norm.ctx_scale);
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(flow.norm.target_shift.size()));
  write_vec(out, flow.norm.target_shift);
  write_vec(out, flow.norm.target_scale);
  write_box(out, flow.meta.x_domain);
  write_string(out, flow.meta.system_name);
  write_pod<std::uint8_t>(out, flow.meta.integer_state ? 1 : 0);
  for (const auto& perm : flow.perms) {
    for (int p : perm) write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(p));
  }
  const Eigen::VectorXd w = flow.get_weights();
  write_pod<std::uint64_t>(out, static_cast<std::uint64_t>(w.size()));
  write_vec(out, w);
}

FlowModel read_flow_payload(std::istream& in, const std::string& path) {
  Reader r(in, path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic (not a checkpoint)");
  const auto version = r.pod<std::uint32_t>("version");
  if (version != kVersion) r.fail("unsupported checkpoint version " + std::to_string(version));

  FlowConfig cfg;
  cfg.n_layers = static_cast<int>(r.pod<std::uint32_t>("layer count"));
  const int d = static_cast<int>(r.pod<std::uint32_t>("d"));
  const int n_u = static_cast<int>(r.pod<std::uint32_t>("n_u"));
  const int n_gamma = static_cast<int>(r.pod<std::uint32_t>("n_gamma"));
  const auto family = r.pod<std::uint8_t>("basis family");
  if (family > 2) r.fail("unknown basis family id " + std::to_string(family));
  const int m = static_cast<int>(r.pod<std::uint32_t>("basis m"));
  const double delta = r.pod<double>("delta");
  const auto n_hidden = r.pod<std::uint32_t>("hidden count");
  if (n_hidden > 64) r.fail("implausible hidden layer count");
  cfg.hidden.clear();
  for (std::uint32_t i = 0; i < n_hidden; ++i) {
    cfg.hidden.push_back(static_cast<int>(r.pod<std::uint32_t>("hidden width")));
  }
  cfg.log_scale_clamp = r.pod<double>("log-scale clamp");

  FlowModel flow = make_flow(d, n_gamma, cfg, /*seed=*/0);
  const auto nc = r.pod<std::uint32_t>("ctx stats size");
  if (static_cast<int>(nc) != flow.ctx_dim()) r.fail("context stats size mismatch");
  flow.norm.ctx_shift = r.vec(nc, "ctx shift");
  flow.norm.ctx_scale = r.vec(nc, "ctx scale");
  const auto nt = r.pod<std::uint32_t>("target stats size");
  if (static_cast<int>(nt) != d) r.fail("target stats size mismatch");
  flow.norm.target_shift = r.vec(nt, "target shift");
  flow.norm.target_scale = r.vec(nt, "target scale");
  flow.meta.basis.family = static_cast<BasisFamily>(family);
  flow.meta.basis.m = m;
  flow.meta.basis.delta = delta;
  flow.meta.n_u = n_u;
  flow.meta.delta = delta;
  flow.meta.x_domain = read_box(r, "x domain");
  flow.meta.system_name = r.str("system name");
  flow.meta.integer_state = r.pod<std::uint8_t>("integer-state flag") != 0;
  for (auto& perm : flow.perms) {
    for (auto& p : perm) {
      p = static_cast<int>(r.pod<std::uint32_t>("permutation"));
      if (p < 0 || p >= d) r.fail("permutation entry out of range");
    }
  }
  const auto n_weights = r.pod<std::uint64_t>("weight count");
  if (n_weights != static_cast<std::uint64_t>(flow.n_params())) {
    r.fail("weight count " + std::to_string(n_weights) + " != expected " +
           std::to_string(flow.n_params()));
  }
  flow.set_weights(r.vec(static_cast<std::size_t>(n_weights), "weights"));
  return flow;
}

}  // namespace detail

void save_flow(const FlowModel& flow, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  detail::write_flow_payload(out, flow);
  detail::write_pod<std::uint8_t>(out, 0);  // no trainer state
  if (!out) throw FormatError("write to " + path + " failed");
}

FlowModel load_flow(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path);
  return detail::read_flow_payload(in, path);
}

}  // namespace sfml
