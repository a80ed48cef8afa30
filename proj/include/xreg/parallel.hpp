#pragma once

#include <functional>
#include <thread>
#include <vector>

namespace xreg {

// Index-striped parallel loop. Work items must write only to their own slots
// so the result is schedule-independent; threads <= 1 runs inline.
inline void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < count; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace xreg
