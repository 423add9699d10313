#pragma once
// Dense linear algebra aliases and small helpers shared by all modules.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace qbsde {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Matrix exponential (scaling-and-squaring).
inline Mat expm(const Mat& a) { return a.exp(); }

/// Runs fn(begin, end) over disjoint index ranges, possibly on several
/// threads. Callers must only write to slots owned by their range; every
/// cross-path reduction happens afterwards in fixed index order, so the
/// result does not depend on `threads`.
inline void parallel_for(std::ptrdiff_t n, int threads,
                         const std::function<void(std::ptrdiff_t, std::ptrdiff_t)>& fn) {
  if (n <= 0) return;
  const int workers = std::max(1, threads);
  if (workers == 1 || n < 2 * workers) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  const std::ptrdiff_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::ptrdiff_t lo = w * chunk;
    const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace qbsde
