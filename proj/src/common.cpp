#include "sfml/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>
#include <vector>

#include "sfml/detail/binio.hpp"

namespace sfml {

Box::Box(Eigen::VectorXd lo_, Eigen::VectorXd hi_)
    : lo(std::move(lo_)), hi(std::move(hi_)) {
  validate();
}

Box Box::cube(int dim, double lo_v, double hi_v) {
  return Box(Eigen::VectorXd::Constant(dim, lo_v),
             Eigen::VectorXd::Constant(dim, hi_v));
}

bool Box::contains(const Eigen::VectorXd& x) const {
  if (x.size() != lo.size()) return false;
  return (x.array() >= lo.array()).all() && (x.array() <= hi.array()).all();
}

Box Box::scaled(double factor) const {
  Eigen::VectorXd center = 0.5 * (lo + hi);
  Eigen::VectorXd half = 0.5 * factor * (hi - lo);
  Box out;
  out.lo = center - half;
  out.hi = center + half;
  return out;
}

void Box::validate() const {
  if (lo.size() != hi.size()) {
    throw ConfigError("box lo/hi dimensions differ (" + std::to_string(lo.size()) +
                      " vs " + std::to_string(hi.size()) + ")");
  }
  for (Eigen::Index i = 0; i < lo.size(); ++i) {
    if (!std::isfinite(lo[i]) || !std::isfinite(hi[i])) {
      throw ConfigError("box bounds must be finite (coordinate " +
                        std::to_string(i) + ")");
    }
    if (lo[i] > hi[i]) {
      throw ConfigError("box is inverted at coordinate " + std::to_string(i) +
                        ": lo=" + std::to_string(lo[i]) +
                        " > hi=" + std::to_string(hi[i]));
    }
  }
}

int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::int64_t n, int threads,
                  const std::function<void(std::int64_t)>& fn,
                  std::int64_t chunk) {
  threads = resolve_threads(threads);
  if (n <= 0) return;
  if (threads <= 1 || n <= chunk) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const std::int64_t n_chunks = (n + chunk - 1) / chunk;
  std::atomic<std::int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::int64_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      const std::int64_t begin = c * chunk;
      const std::int64_t end = std::min(n, begin + chunk);
      for (std::int64_t i = begin; i < end; ++i) fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int n_workers = static_cast<int>(std::min<std::int64_t>(threads, n_chunks));
  pool.reserve(static_cast<std::size_t>(n_workers));
  for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

namespace detail {

void write_box(std::ostream& out, const Box& box) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(box.lo.size()));
  write_vec(out, box.lo);
  write_vec(out, box.hi);
}

Box read_box(Reader& r, const char* what) {
  const auto n = r.pod<std::uint32_t>(what);
  if (n > (1u << 24)) r.fail(std::string("implausible box length for ") + what);
  Box box;
  box.lo = r.vec(n, what);
  box.hi = r.vec(n, what);
  box.validate();
  return box;
}

}  // namespace detail

}  // namespace sfml
