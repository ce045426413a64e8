#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bipgps {

/// Runs body(k) for k in [0, count) on up to `workers` threads. Each index
/// is claimed exactly once; results must be written to per-index slots so
/// the outcome does not depend on scheduling. Stops claiming new indices
/// once `cancel` is set. The first exception thrown by a body is rethrown.
inline void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body,
                         const std::atomic<bool>* cancel = nullptr) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run = [&] {
    while (true) {
      if (cancel && cancel->load(std::memory_order_relaxed)) return;
      std::size_t k = next.fetch_add(1);
      if (k >= count) return;
      try {
        body(k);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next.store(count);
        return;
      }
    }
  };
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
  if (workers == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
}

}  // namespace bipgps
