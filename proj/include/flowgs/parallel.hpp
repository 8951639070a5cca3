#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace flowgs {

/// Worker count used by data-parallel loops. 0 means all hardware threads.
void set_thread_count(int threads);
int thread_count();

/// Runs fn(i) for i in [0, n). Items must write disjoint outputs; scheduling
/// order never affects results.
template <class Fn>
void parallel_for(size_t n, Fn&& fn) {
  const size_t workers = std::min<size_t>(static_cast<size_t>(thread_count()), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
}

}  // namespace flowgs
