#pragma once

#include <cstdint>
#include <cstdlib>
#include <random>
#include <thread>
#include <vector>

namespace varlocal {

// Deterministic uniform doubles on top of the fully specified mt19937_64
// stream. std::uniform_real_distribution is implementation-defined, which
// would break the bit-identical-reports contract across toolchains.
struct Rng {
  std::mt19937_64 eng;

  explicit Rng(std::uint64_t seed) : eng(seed) {}

  // [0, 1)
  double uniform() { return static_cast<double>(eng() >> 11) * 0x1.0p-53; }

  // [-1, 1)
  double sym() { return 2.0 * uniform() - 1.0; }

  // [lo, hi)
  double range(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t raw() { return eng(); }
};

// Independent per-task stream: tasks may run in any order or in parallel
// without touching each other's state.
inline std::uint64_t substream(std::uint64_t seed, std::uint64_t task) {
  return seed + 1000003ull * (task + 1);
}

inline int thread_cap() {
  if (const char* env = std::getenv("VARLOCAL_THREADS")) {
    int v = std::atoi(env);
    if (v >= 1) return v;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(hw ? (hw > 8 ? 8 : hw) : 1);
}

// Static index partition; fn(i) must touch only slot i of any shared output
// so the result is independent of the worker count.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& fn) {
  int workers = thread_cap();
  if (workers <= 1 || n <= 1) {
    for (std::int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  if (workers > n) workers = static_cast<int>(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::int64_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace varlocal
