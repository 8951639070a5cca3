#include "flowgs/parallel.hpp"

namespace flowgs {

namespace {
std::atomic<int> g_threads{0};
}

void set_thread_count(int threads) { g_threads = std::max(threads, 0); }

int thread_count() {
  const int t = g_threads.load();
  if (t > 0) return t;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace flowgs
