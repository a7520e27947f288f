#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace asynclab {

/// Worker count: ASYNC_LAB_THREADS if set to a positive integer, otherwise
/// the hardware concurrency.
inline int default_threads() {
  if (const char* env = std::getenv("ASYNC_LAB_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<int>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(i) for i in [0, n) on up to `threads` workers. Tasks are claimed
/// in index order; once *cancel is set no new task starts. The first
/// exception thrown by a task is rethrown after all workers have joined.
/// Returns the number of tasks that ran to completion.
template <class Fn>
std::int64_t parallel_for(std::int64_t n, int threads, Fn&& fn,
                          const std::atomic<bool>* cancel = nullptr) {
  std::atomic<std::int64_t> next{0};
  std::atomic<std::int64_t> done{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::atomic<bool> failed{false};

  auto work = [&] {
    for (;;) {
      if (failed.load() || (cancel && cancel->load())) return;
      const std::int64_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
        done.fetch_add(1);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        failed = true;
      }
    }
  };

  const int workers = static_cast<int>(std::clamp<std::int64_t>(threads, 1, std::max<std::int64_t>(n, 1)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return done.load();
}

}  // namespace asynclab
