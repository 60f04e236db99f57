// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "vlmq/linalg.hpp"

namespace {

vlmq::Matrix random_spd(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  vlmq::Matrix a(n, n);
  for (double &x : a.data()) {
    x = normal(rng);
  }
  vlmq::Matrix spd = vlmq::multiply_abt(a, a);
  for (std::size_t i = 0; i < n; ++i) {
    spd.at(i, i) += static_cast<double>(n);
  }
  return spd;
}

void bm_cholesky(benchmark::State &state) {
  const auto a = random_spd(static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::cholesky(a));
  }
}

void bm_inverse_spd(benchmark::State &state) {
  const auto a = random_spd(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::inverse_spd(a));
  }
}

void bm_upper_inverse_factor(benchmark::State &state) {
  const auto a = random_spd(static_cast<std::size_t>(state.range(0)), 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::upper_inverse_factor(a));
  }
}

void bm_top_components(benchmark::State &state) {
  const auto a = random_spd(static_cast<std::size_t>(state.range(0)), 4);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::top_principal_components(a, 2, 100, 5));
  }
}

} // namespace

BENCHMARK(bm_cholesky)->Arg(16)->Arg(64)->Arg(128);
BENCHMARK(bm_inverse_spd)->Arg(16)->Arg(64)->Arg(128);
BENCHMARK(bm_upper_inverse_factor)->Arg(16)->Arg(64)->Arg(128);
BENCHMARK(bm_top_components)->Arg(16)->Arg(64);
