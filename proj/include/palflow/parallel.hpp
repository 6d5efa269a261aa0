#pragma once

// Tiny fork-join helper for per-block work. The thread cap comes from
// PALFLOW_THREADS (default 1, i.e. run inline).

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace palflow {

inline std::atomic<int>& thread_cap_storage() {
  static std::atomic<int> cap{[] {
    const char* env = std::getenv("PALFLOW_THREADS");
    if (!env) return 1;
    try {
      return std::max(1, std::stoi(env));
    } catch (...) {
      return 1;
    }
  }()};
  return cap;
}

inline int max_threads() { return thread_cap_storage().load(); }
inline void set_max_threads(int n) { thread_cap_storage().store(std::max(1, n)); }

/// Calls fn(i) for i in [0, n). Each index writes its own output slot, so
/// results do not depend on the thread count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  auto run = [&](std::size_t w) {
    try {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace palflow
