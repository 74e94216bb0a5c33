#pragma once

#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace probex {

inline int& thread_count_ref() {
  static int count = 0;  // 0 = resolve from env / hardware
  return count;
}

inline void set_thread_count(int n) { thread_count_ref() = n; }

inline int thread_count() {
  if (thread_count_ref() > 0) return thread_count_ref();
  if (const char* env = std::getenv("PROBEX_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs f(block_index, begin, end) over fixed-size blocks of [0, n). Blocking
// is a function of n and block_size only, never of the worker count, so any
// per-block partial results can be reduced in block order to give results
// that are independent of the number of threads.
template <class F>
void parallel_blocks(std::size_t n, std::size_t block_size, F&& f) {
  if (n == 0) return;
  if (block_size == 0) block_size = 1;
  const std::size_t n_blocks = (n + block_size - 1) / block_size;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n_blocks);

  if (workers <= 1) {
    for (std::size_t b = 0; b < n_blocks; ++b) {
      const std::size_t begin = b * block_size;
      f(b, begin, std::min(begin + block_size, n));
    }
    return;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      const std::size_t begin = b * block_size;
      f(b, begin, std::min(begin + block_size, n));
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

inline std::size_t block_count(std::size_t n, std::size_t block_size) {
  return n == 0 ? 0 : (n + block_size - 1) / block_size;
}

}  // namespace probex
