// Copyright (c) 2026 moefield authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <thread>
#include <vector>

namespace moefield {

// Runs fn(begin, end) over [0,n) split into contiguous chunks, one chunk per
// worker. Results must not depend on the partitioning: callers only use this
// for pure per-element work (rendering, dataset generation). Training stays
// single-threaded so gradient accumulation order is fixed.
inline void parallel_for(int64_t n, int threads,
                         const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  threads = std::max(1, threads);
  int64_t nthreads = std::min<int64_t>(threads, n);
  if (nthreads == 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(nthreads));
  int64_t chunk = (n + nthreads - 1) / nthreads;
  for (int64_t t = 0; t < nthreads; ++t) {
    int64_t lo = t * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace moefield
