#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace addlink {

//! Calls f(i) for i in [0, count) on up to `threads` workers. Work items
//! must write only to their own output slot, so results do not depend on
//! scheduling. The first exception thrown by any item is rethrown.
template<typename F>
void
parallel_for(std::size_t count, unsigned threads, F&& f)
{
  threads = std::max(1u, std::min<unsigned>(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i)
      f(i);
    return;
  }
  std::atomic<std::size_t> next{ 0 };
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error)
          error = std::current_exception();
        next = count;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  for (unsigned t = 1; t < threads; ++t)
    pool.emplace_back(worker);
  worker();
  for (auto& t : pool)
    t.join();
  if (error)
    std::rethrow_exception(error);
}

//! Worker count used when the caller passes 0.
inline unsigned
default_threads()
{
  return std::max(1u, std::thread::hardware_concurrency());
}

} // namespace addlink
