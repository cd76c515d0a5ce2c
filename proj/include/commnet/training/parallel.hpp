#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace commnet {

/// Runs fn(0..count-1) across up to `workers` threads. Work items must write
/// only to their own output slots; the caller reduces the slots in index
/// order afterwards, which is what keeps results independent of the worker
/// count and of scheduling.
inline void run_chunks(int count, int workers, const std::function<void(int)>& fn) {
  if (count <= 0) return;
  if (workers <= 1 || count == 1) {
    for (int c = 0; c < count; ++c) fn(c);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      int c = next.fetch_add(1);
      if (c >= count) return;
      try {
        fn(c);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> threads;
  int spawn = workers < count ? workers : count;
  threads.reserve(static_cast<std::size_t>(spawn));
  for (int w = 0; w < spawn; ++w) threads.emplace_back(body);
  for (std::thread& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace commnet
