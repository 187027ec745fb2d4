#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>

namespace sfml {

// Error taxonomy. The CLI maps these onto its exit codes, everything else
// just propagates them.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct PredictError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Axis-aligned box of per-coordinate [lo, hi] intervals.
struct Box {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Box() = default;
  Box(Eigen::VectorXd lo_, Eigen::VectorXd hi_);

  static Box cube(int dim, double lo, double hi);

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Eigen::VectorXd& x) const;
  /// Box with the same center and half-widths scaled by `factor`.
  Box scaled(double factor) const;
  void validate() const;  // lo <= hi, finite, matching sizes
};

/// Runs fn(i) for i in 0..n-1 on up to `threads` workers. Work is handed out
/// in fixed chunks of `chunk` indices, so any reduction done per chunk and
/// combined in chunk order is independent of the thread count.
void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t)>& fn,
                  std::int64_t chunk = 64);

/// Resolves a thread-count request: 0 means "use the hardware concurrency".
int resolve_threads(int requested);

}  // namespace sfml
