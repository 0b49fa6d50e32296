#pragma once

// Minimal deterministic data parallelism. Work is split into fixed-size
// chunks whose boundaries do not depend on the thread count, and partial
// results are always merged in chunk order, so outputs are bit-identical
// for any `threads` value.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ista {

/// Calls fn(i) for every i in [0, count). fn must only touch state owned by i.
template <class Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  threads = std::max(1u, threads);
  if (threads == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const unsigned workers =
      static_cast<unsigned>(std::min<std::size_t>(threads, count));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < count; i += workers) fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
  }
  if (failure) std::rethrow_exception(failure);
}

/// Maps fixed-size chunks of [0, count) to partial results and folds them
/// into `acc` in chunk order. At most `threads` partials are alive at once.
///   map(begin, end) -> T
///   merge(T& acc, T&& partial)
template <class T, class Map, class Merge>
void chunked_reduce(std::size_t count, std::size_t chunk, unsigned threads,
                    T& acc, Map&& map, Merge&& merge) {
  chunk = std::max<std::size_t>(1, chunk);
  threads = std::max(1u, threads);
  const std::size_t n_chunks = (count + chunk - 1) / chunk;
  for (std::size_t wave = 0; wave < n_chunks; wave += threads) {
    const std::size_t in_wave = std::min<std::size_t>(threads, n_chunks - wave);
    std::vector<T> partials(in_wave);
    parallel_for(in_wave, threads, [&](std::size_t j) {
      const std::size_t begin = (wave + j) * chunk;
      partials[j] = map(begin, std::min(count, begin + chunk));
    });
    for (auto& p : partials) merge(acc, std::move(p));
  }
}

}  // namespace ista
