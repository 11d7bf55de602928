#pragma once

#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace gfreml {

// Worker cap: GFREML_THREADS when set to a positive integer, otherwise the
// hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("GFREML_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<int>(v);
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

// Runs fn(i) for i in [0, n). Tasks must write only to their own output slot;
// callers aggregate in index order afterwards, so results are independent of
// the worker count. If tasks throw, the exception from the smallest index is
// rethrown after all workers drain.
template <class Fn>
inline void parallel_for(std::size_t n, Fn&& fn, int threads = max_threads()) {
  if (n == 0) return;
  std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(threads < 1 ? 1 : threads), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::mutex err_mtx;
  std::size_t err_index = n;
  std::exception_ptr err;

  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mtx);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace gfreml
