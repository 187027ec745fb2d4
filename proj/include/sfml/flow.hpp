#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "sfml/dataset.hpp"

namespace sfml {

/// Masked feed-forward conditioner (MADE). Inputs are the autoregressive
/// coordinates (the layer's transformed vector) followed by the context
/// (x0, gamma); outputs are the 2*d per-coordinate (log-scale, shift) pairs,
/// laid out as [s_1..s_d, t_1..t_d].
///
/// Masking follows the usual degree scheme. Autoregressive input i carries
/// degree i (1-based), context inputs carry degree 0, hidden unit h carries
/// degree h mod d, and a connection is kept when the receiving degree is >=
/// the sending degree (strictly > for the output layer). Degree-0 hidden
/// units therefore carry pure context, which is what lets the first
/// coordinate's (s, t) depend on (x0, gamma) while staying independent of
/// every autoregressive input.
struct MadeNet {
  int ar_dim = 0;
  int ctx_dim = 0;
  std::vector<Eigen::MatrixXd> weights;  // out x in per linear layer
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::MatrixXd> masks;    // 0/1, same shapes as weights

  void init(int ar_dim, int ctx_dim, const std::vector<int>& hidden, Rng& rng);

  /// Batch forward; rows are records. Returns B x 2*ar_dim [s_raw | t].
  Eigen::MatrixXd forward(const Eigen::MatrixXd& ar,
                          const Eigen::MatrixXd& ctx) const;

  /// Forward keeping the per-layer activations needed by backward().
  struct Cache {
    std::vector<Eigen::MatrixXd> inputs;  // input of each linear layer
  };
  Eigen::MatrixXd forward_cached(const Eigen::MatrixXd& ar,
                                 const Eigen::MatrixXd& ctx, Cache& cache) const;

  /// Backprop for a cached forward. `d_out` is B x 2*ar_dim. Parameter
  /// gradients are accumulated into `grad` (laid out as flatten_params
  /// documents); the gradient w.r.t. the autoregressive inputs is added to
  /// `d_ar` when non-null.
  void backward(const Cache& cache, const Eigen::MatrixXd& d_out, double* grad,
                Eigen::MatrixXd* d_ar) const;

  std::int64_t n_params() const;
};

struct FlowConfig {
  int n_layers = 5;
  std::vector<int> hidden = {20, 20, 20};
  double log_scale_clamp = 5.0;  // s = clamp * tanh(s_raw / clamp)
};

/// Training provenance carried by every model so prediction can mirror the
/// training-time excitation parameterization and state domain.
struct FlowMeta {
  BasisSpec basis;
  int n_u = 0;
  double delta = 0.0;
  Box x_domain;
  std::string system_name;
  bool integer_state = false;
};

/// Conditional normalizing flow: K masked autoregressive affine layers with
/// a coordinate permutation per layer (ordering reversed between layers) and
/// a standard-normal base distribution. Either direction is a diffeomorphism
/// of R^d for any weights; the log-scales are tanh-clamped to +-
/// log_scale_clamp per layer.
struct FlowModel {
  int d = 0;
  int n_gamma = 0;
  FlowConfig cfg;
  NormStats norm;
  FlowMeta meta;
  std::vector<MadeNet> layers;           // size cfg.n_layers
  std::vector<std::vector<int>> perms;   // perm[k][i]: output slot i reads input coordinate perm[k][i]

  int ctx_dim() const { return d + n_gamma; }

  std::int64_t n_params() const;
  Eigen::VectorXd get_weights() const;
  void set_weights(const Eigen::VectorXd& w);
  /// 1 for weight-matrix entries, 0 for biases (decoupled weight decay skips biases).
  Eigen::VectorXd weight_decay_mask() const;

  Eigen::VectorXd standardize_ctx(const Eigen::VectorXd& x0,
                                  const Eigen::VectorXd& gamma) const;
};

/// Fresh flow for a training set: conditioner weights random (uniform
/// fan-in scaled), final linear layers zero so the flow starts as the
/// identity in standardized target space.
FlowModel build_flow(const TrainingSet& set, const FlowConfig& cfg, std::uint64_t seed);

/// Fresh flow with identity normalization (mainly for tests and synthetic work).
FlowModel build_flow_raw(int d, int n_gamma, const FlowConfig& cfg, std::uint64_t seed);

/// z -> x1 (original units). Layer k permutes its input and applies
/// y_i = z_i * exp(s_i) + t_i coordinate-sequentially, conditioning on
/// (y_{<i}, context).
Eigen::VectorXd forward_T(const FlowModel& flow, const Eigen::VectorXd& z,
                          const Eigen::VectorXd& x0, const Eigen::VectorXd& gamma);

/// forward_T together with the layers' forward log-determinant (+sum of s).
std::pair<Eigen::VectorXd, double> forward_T_logdet(const FlowModel& flow,
                                                    const Eigen::VectorXd& z,
                                                    const Eigen::VectorXd& x0,
                                                    const Eigen::VectorXd& gamma);

/// x1 -> (z, log-det of the inverse layer stack = -sum of s). The constant
/// log-det of the target normalization is not included here; log_prob adds it.
std::pair<Eigen::VectorXd, double> inverse_S(const FlowModel& flow,
                                             const Eigen::VectorXd& x1,
                                             const Eigen::VectorXd& x0,
                                             const Eigen::VectorXd& gamma);

/// Exact conditional log-density log p(x1 | x0, gamma) in original units.
double log_prob(const FlowModel& flow, const Eigen::VectorXd& x1,
                const Eigen::VectorXd& x0, const Eigen::VectorXd& gamma);

/// n conditional samples (rows). Base draws are record-major: z(r, 0..d-1)
/// is drawn before z(r+1, .).
Eigen::MatrixXd sample(const FlowModel& flow, const Eigen::VectorXd& x0,
                       const Eigen::VectorXd& gamma, int n, Rng& rng);

/// Batch log-density; ctx_raw rows are [x0 | gamma], x1_raw rows are targets.
Eigen::VectorXd log_prob_batch(const FlowModel& flow, const Eigen::MatrixXd& ctx_raw,
                               const Eigen::MatrixXd& x1_raw);

/// Reusable buffers for the gradient engine. The trainer keeps one across
/// iterations so the hot loop performs no allocation.
struct NllScratch;
std::shared_ptr<NllScratch> make_nll_scratch();

/// Mean negative log-likelihood of the batch and its gradient w.r.t. the
/// flat parameter vector. Chunked reduction keeps the result identical for
/// any thread count.
double nll_and_grad(const FlowModel& flow, const Eigen::MatrixXd& ctx_raw,
                    const Eigen::MatrixXd& x1_raw, Eigen::VectorXd& grad,
                    int threads = 1, NllScratch* scratch = nullptr);

/// Checkpoint I/O. Format (little-endian):
///   magic "SFMC" | u32 version=1 | u32 K | u32 d | u32 n_u | u32 n_gamma |
///   u8 basis family | u32 m | f64 delta | u32 #hidden + u32 widths |
///   f64 log-scale clamp | norm stats (4 length-prefixed f64 arrays) |
///   x-domain box | u32 name length + name | u8 integer-state |
///   per-layer u32 perm[d] | u64 #weights + f64 weights |
///   u8 trainer-state flag | [trainer section, see training.hpp].
void save_flow(const FlowModel& flow, const std::string& path);
FlowModel load_flow(const std::string& path);

namespace detail {
void write_flow_payload(std::ostream& out, const FlowModel& flow);
FlowModel read_flow_payload(std::istream& in, const std::string& path);
}  // namespace detail

}  // namespace sfml
