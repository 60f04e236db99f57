// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>

namespace vlmq {

/// Worker cap from VLMQ_THREADS (default: hardware concurrency), at least 1.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n). Work is partitioned into contiguous chunks;
/// iterations must be independent so results are identical for any worker
/// count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)> &fn);

/// Deterministic seed derivation for substreams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

} // namespace vlmq
