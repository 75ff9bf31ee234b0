#pragma once

#include <cstdint>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace terrace {

// Error taxonomy. The CLI maps contract/format/shape failures to exit code 1
// and I/O failures to exit code 2.
struct contract_error : std::runtime_error {
  explicit contract_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct shape_error : contract_error {
  explicit shape_error(const std::string& msg) : contract_error(msg) {}
};

struct format_error : std::runtime_error {
  explicit format_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct truncation_error : format_error {
  explicit truncation_error(const std::string& msg) : format_error(msg) {}
};

struct io_error : std::runtime_error {
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

inline int default_thread_count() {
  if (const char* env = std::getenv("TERRACE_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

inline int& thread_count_ref() {
  static int n = default_thread_count();
  return n;
}

inline int thread_count() { return thread_count_ref(); }

inline void set_thread_count(int n) { thread_count_ref() = n < 1 ? 1 : n; }

// Runs fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries
// depend only on n and the worker count cap, and every chunk writes disjoint
// output, so results are identical for any thread count.
inline void parallel_for(std::int64_t n,
                         const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  int workers = thread_count();
  if (workers > n) workers = static_cast<int>(n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    std::int64_t lo = t * chunk;
    std::int64_t hi = lo + chunk < n ? lo + chunk : n;
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

// splitmix64; used to derive independent per-sample streams from a base seed.
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return mix_seed(a ^ mix_seed(b));
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

}  // namespace terrace
