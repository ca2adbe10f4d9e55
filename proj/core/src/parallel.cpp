#include "pbact/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace pbact {

void parallel_for(size_t n, int n_threads, const std::function<void(size_t)>& job) {
  if (n == 0) return;
  size_t workers = n_threads > 0 ? static_cast<size_t>(n_threads)
                                 : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);

  if (workers == 1) {
    for (size_t i = 0; i < n; ++i) job(i);
    return;
  }

  std::atomic<size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pbact
