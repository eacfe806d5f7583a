#ifndef CERTKIT_PARALLEL_HPP_
#define CERTKIT_PARALLEL_HPP_

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace certkit {

/// Runs fn(i) for i in [0, n) on up to `workers` threads with contiguous
/// chunks. Results must be written by index so the outcome does not depend on
/// scheduling. The first exception (lowest chunk) is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn && fn)
{
  const std::size_t w = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) { fn(i); }
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  const std::size_t chunk = (n + w - 1) / w;
  for (std::size_t t = 0; t < w; ++t) {
    threads.emplace_back([&, t] {
      try {
        const std::size_t end = std::min(n, (t + 1) * chunk);
        for (std::size_t i = t * chunk; i < end; ++i) { fn(i); }
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  for (auto & th : threads) { th.join(); }
  for (auto & e : errors) {
    if (e) { std::rethrow_exception(e); }
  }
}

}  // namespace certkit

#endif  // CERTKIT_PARALLEL_HPP_
