// SPDX-License-Identifier: Apache-2.0
#include "vlmq/threads.hpp"

#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace vlmq {

std::size_t worker_count() {
  std::size_t workers = std::thread::hardware_concurrency();
  if (workers == 0) {
    workers = 1;
  }
  if (const char *env = std::getenv("VLMQ_THREADS")) {
    try {
      const long parsed = std::stol(env);
      if (parsed >= 1) {
        workers = static_cast<std::size_t>(parsed);
      }
    } catch (const std::exception &) {
      // ignore malformed values, keep the default
    }
  }
  return workers;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)> &fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) {
      break;
    }
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) {
        fn(i);
      }
    });
  }
  for (auto &th : pool) {
    th.join();
  }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 round over the combined state
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

} // namespace vlmq
