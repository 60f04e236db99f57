// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include <random>

#include "vlmq/backward.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/model.hpp"

namespace {

struct BlockFixture {
  vlmq::ModelSpec spec;
  vlmq::LayerWeights weights;
  vlmq::Matrix x, x_hat;
};

BlockFixture make_block(std::size_t ci, std::size_t n) {
  BlockFixture f;
  f.spec.num_layers = 1;
  f.spec.d_model = ci;
  f.spec.num_heads = ci / 8;
  f.spec.head_dim = 8;
  f.spec.d_ff = 2 * ci;
  f.spec.seed = 1;
  f.weights = vlmq::generate_model(f.spec)[0];
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  f.x = vlmq::Matrix(ci, n);
  for (double &v : f.x.data()) {
    v = normal(rng);
  }
  vlmq::Matrix noise(ci, n);
  for (double &v : noise.data()) {
    v = 0.03 * normal(rng);
  }
  f.x_hat = vlmq::add(f.x, noise);
  return f;
}

void bm_attn_forward(benchmark::State &state) {
  const BlockFixture f = make_block(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::attn_forward(f.x, f.weights, f.spec));
  }
}

void bm_layer_forward(benchmark::State &state) {
  const BlockFixture f = make_block(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::layer_forward(f.x, f.weights, f.spec));
  }
}

void bm_block_backward(benchmark::State &state) {
  const BlockFixture f = make_block(static_cast<std::size_t>(state.range(0)), 64);
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlmq::block_backward(f.x, f.x_hat, f.weights, f.spec));
  }
}

} // namespace

BENCHMARK(bm_attn_forward)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(bm_layer_forward)->Arg(16)->Arg(32)->Arg(64);
BENCHMARK(bm_block_backward)->Arg(16)->Arg(32)->Arg(64);

BENCHMARK_MAIN();
