// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "vlmq/linalg.hpp"
#include "vlmq/oracle.hpp"
#include "vlmq/solver.hpp"

namespace {

struct LayerFixture {
  vlmq::Matrix w;
  vlmq::HessianState state;
};

LayerFixture make_layer(std::size_t ci, std::size_t co, bool weighted, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.1, 4.0);
  const std::size_t n = 2 * ci;

  LayerFixture f;
  f.w = vlmq::Matrix(co, ci);
  for (double &x : f.w.data()) {
    x = normal(rng);
  }
  vlmq::Matrix x_fp(ci, n), noise(ci, n);
  for (double &x : x_fp.data()) {
    x = normal(rng);
  }
  for (double &x : noise.data()) {
    x = 0.05 * normal(rng);
  }
  const vlmq::Matrix x_hat = vlmq::add(x_fp, noise);
  vlmq::ImportanceFactors g;
  g.diag.resize(n);
  for (double &x : g.diag) {
    x = uni(rng);
  }
  f.state = vlmq::accumulate_hessian(vlmq::HessianState(), x_hat, &x_fp,
                                     weighted ? &g : nullptr);
  return f;
}

vlmq::SolveConfig bench_cfg(vlmq::Method m) {
  vlmq::SolveConfig cfg;
  cfg.method = m;
  cfg.bits = 3;
  cfg.act_order = true;
  cfg.damp = 0.01;
  return cfg;
}

void bm_quantize_gptq(benchmark::State &state) {
  const std::size_t ci = static_cast<std::size_t>(state.range(0));
  const LayerFixture f = make_layer(ci, ci, false, 1);
  const vlmq::SolveConfig cfg = bench_cfg(vlmq::Method::GPTQ);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::quantize_layer_gptq(f.w, f.state, cfg));
  }
}

void bm_quantize_gptaq(benchmark::State &state) {
  const std::size_t ci = static_cast<std::size_t>(state.range(0));
  const LayerFixture f = make_layer(ci, ci, false, 2);
  const vlmq::SolveConfig cfg = bench_cfg(vlmq::Method::GPTAQ);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::quantize_layer_gptaq(f.w, f.state, cfg));
  }
}

void bm_quantize_vlmq(benchmark::State &state) {
  const std::size_t ci = static_cast<std::size_t>(state.range(0));
  const LayerFixture f = make_layer(ci, ci, true, 3);
  const vlmq::SolveConfig cfg = bench_cfg(vlmq::Method::VLMQ);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::quantize_layer_vlmq(f.w, f.state, cfg));
  }
}

void bm_quantize_naive_reference(benchmark::State &state) {
  const std::size_t ci = static_cast<std::size_t>(state.range(0));
  const LayerFixture f = make_layer(ci, ci, true, 4);
  vlmq::SolveConfig cfg = bench_cfg(vlmq::Method::VLMQ);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::oracle::reference_quantize_layer(f.w, f.state, cfg));
  }
}

void bm_accumulate_hessian(benchmark::State &state) {
  const std::size_t ci = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  vlmq::Matrix x(ci, 4 * ci);
  for (double &v : x.data()) {
    v = normal(rng);
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::accumulate_hessian(vlmq::HessianState(), x));
  }
}

} // namespace

BENCHMARK(bm_quantize_gptq)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_quantize_gptaq)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_quantize_vlmq)->Arg(32)->Arg(64)->Arg(128);
BENCHMARK(bm_quantize_naive_reference)->Arg(16)->Arg(32);
BENCHMARK(bm_accumulate_hessian)->Arg(32)->Arg(64);
