#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace dsmrf {

// f(i) for i in [0, n) on up to `jobs` threads; each index writes its own slot so results
// do not depend on scheduling. The first exception is rethrown after all workers stop.
template <typename F>
void parallel_for(size_t n, int jobs, F&& f) {
  size_t nt = std::min<size_t>(std::max(1, jobs), n);
  std::atomic<size_t> next{0};
  std::exception_ptr err;
  std::mutex m;
  auto worker = [&] {
    for (size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        f(i);
      } catch (...) {
        std::lock_guard<std::mutex> g(m);
        if (!err) err = std::current_exception();
        next = n;
      }
    }
  };
  if (nt <= 1) {
    worker();
  } else {
    std::vector<std::thread> th;
    for (size_t j = 0; j < nt; ++j) th.emplace_back(worker);
    for (auto& x : th) x.join();
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace dsmrf
