// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "vlmq/backward.hpp"
#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/model.hpp"

using namespace vlmq;

namespace {

ModelSpec small_spec(std::size_t ci, std::size_t heads, std::uint64_t seed) {
  ModelSpec spec;
  spec.num_layers = 1;
  spec.d_model = ci;
  spec.num_heads = heads;
  spec.head_dim = ci / heads;
  spec.d_ff = 2 * ci;
  spec.seed = seed;
  return spec;
}

Matrix random_input(std::mt19937_64 &rng, std::size_t rows, std::size_t cols, double s = 1.0) {
  std::normal_distribution<double> normal(0.0, s);
  Matrix m(rows, cols);
  for (double &x : m.data()) {
    x = normal(rng);
  }
  return m;
}

} // namespace

TEST_CASE("identical branches give zero loss and zero gradients") {
  const ModelSpec spec = small_spec(8, 2, 1);
  const LayerWeights w = generate_model(spec)[0];
  std::mt19937_64 rng(2);
  const Matrix x = random_input(rng, 8, 5);
  CHECK(block_loss(x, x, w, spec).value == 0.0);
  const ProjectionGradients g = block_backward(x, x, w, spec);
  CHECK(max_abs(g.q) == 0.0);
  CHECK(max_abs(g.k) == 0.0);
  CHECK(max_abs(g.v) == 0.0);
  CHECK(max_abs(g.o) == 0.0);
}

TEST_CASE("zero o projection reduces the block loss to the input error") {
  const ModelSpec spec = small_spec(8, 2, 3);
  LayerWeights w = generate_model(spec)[0];
  std::fill(w.o.data().begin(), w.o.data().end(), 0.0);
  std::mt19937_64 rng(4);
  const Matrix x = random_input(rng, 8, 4);
  const Matrix x_hat = add(x, random_input(rng, 8, 4, 0.1));
  double expect = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x.data()[i] - x_hat.data()[i];
    expect += d * d;
  }
  CHECK(block_loss(x, x_hat, w, spec).value == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("block loss equals an independent double evaluation") {
  const ModelSpec spec = small_spec(8, 2, 5);
  const LayerWeights w = generate_model(spec)[0];
  std::mt19937_64 rng(6);
  const Matrix x = random_input(rng, 8, 6);
  const Matrix x_hat = add(x, random_input(rng, 8, 6, 0.05));
  const BlockLoss loss = block_loss(x, x_hat, w, spec);
  const Matrix a = attn_forward(x, w, spec).out;
  const Matrix b = attn_forward(x_hat, w, spec).out;
  double expect = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    expect += d * d;
  }
  CHECK(loss.value == expect);
  CHECK(bitwise_equal(loss.target, a));
  CHECK(bitwise_equal(loss.actual, b));
}

TEST_CASE("gradients match central finite differences") {
  const ModelSpec spec = small_spec(8, 2, 7);
  const LayerWeights w = generate_model(spec)[0];
  std::mt19937_64 rng(8);
  const Matrix x = random_input(rng, 8, 6);
  const Matrix x_hat = add(x, random_input(rng, 8, 6, 0.02));
  const ProjectionGradients g = block_backward(x, x_hat, w, spec);
  const Matrix *mats[4] = {&g.q, &g.k, &g.v, &g.o};
  const double h = 1e-4;
  for (int p = 0; p < 4; ++p) {
    Matrix offset(8, 6);
    double worst = 0.0;
    for (std::size_t r = 0; r < 8; ++r) {
      for (std::size_t c = 0; c < 6; ++c) {
        offset.at(r, c) = h;
        const double lp = detail::block_loss_with_offset(x, x_hat, w, spec,
                                                         static_cast<detail::Projection>(p),
                                                         offset);
        offset.at(r, c) = -h;
        const double lm = detail::block_loss_with_offset(x, x_hat, w, spec,
                                                         static_cast<detail::Projection>(p),
                                                         offset);
        offset.at(r, c) = 0.0;
        worst = std::max(worst, std::fabs((lp - lm) / (2.0 * h) - mats[p]->at(r, c)));
      }
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("gradients match finite differences with rope enabled") {
  ModelSpec spec = small_spec(8, 2, 17);
  spec.rope_enabled = true;
  const LayerWeights w = generate_model(spec)[0];
  std::mt19937_64 rng(18);
  const Matrix x = random_input(rng, 8, 4);
  const Matrix x_hat = add(x, random_input(rng, 8, 4, 0.02));
  const ProjectionGradients g = block_backward(x, x_hat, w, spec);
  const double h = 1e-4;
  Matrix offset(8, 4);
  double worst = 0.0;
  for (std::size_t r = 0; r < 8; ++r) {
    for (std::size_t c = 0; c < 4; ++c) {
      offset.at(r, c) = h;
      const double lp =
        detail::block_loss_with_offset(x, x_hat, w, spec, detail::Projection::Q, offset);
      offset.at(r, c) = -h;
      const double lm =
        detail::block_loss_with_offset(x, x_hat, w, spec, detail::Projection::Q, offset);
      offset.at(r, c) = 0.0;
      worst = std::max(worst, std::fabs((lp - lm) / (2.0 * h) - g.q.at(r, c)));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("first-order residual shrinks four-fold when the step halves") {
  const ModelSpec spec = small_spec(12, 2, 9);
  const LayerWeights w = generate_model(spec)[0];
  std::mt19937_64 rng(10);
  const Matrix x = random_input(rng, 12, 6);
  const Matrix x_hat = add(x, random_input(rng, 12, 6, 0.02));
  const ProjectionGradients g = block_backward(x, x_hat, w, spec);
  const double l0 = block_loss(x, x_hat, w, spec).value;
  const Matrix dz = random_input(rng, 12, 6, 0.05);
  const double inner = dot(dz.data(), g.k.data());
  auto residual = [&](double t) {
    const double lt =
      detail::block_loss_with_offset(x, x_hat, w, spec, detail::Projection::K, scaled(dz, t));
    return std::fabs(lt - l0 - t * inner);
  };
  const double ratio = residual(1e-2) / residual(5e-3);
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("l1 importance of a 2x2 gradient matrix") {
  const Matrix p(2, 2, {1.0, -2.0, 3.0, 4.0});
  const ImportanceFactors g = gradients_to_importance(p, NormKind::L1);
  CHECK(g.diag == std::vector<double>{2.0, 3.0});
}

TEST_CASE("zero gradients yield uniform importance") {
  const Matrix p(4, 6);
  const ImportanceFactors g = gradients_to_importance(p, NormKind::L1);
  for (double x : g.diag) {
    CHECK(x == 1.0);
  }
}

TEST_CASE("l2 importance matches a direct column-norm computation") {
  std::mt19937_64 rng(20);
  const Matrix p = random_input(rng, 16, 10);
  const ImportanceFactors g = gradients_to_importance(p, NormKind::L2);
  for (std::size_t c = 0; c < 10; ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < 16; ++r) {
      ss += p.at(r, c) * p.at(r, c);
    }
    CHECK(g.diag[c] == doctest::Approx(std::sqrt(ss / 16.0)).epsilon(1e-12));
  }
}

TEST_CASE("importance floor keeps dead tokens positive") {
  Matrix p(3, 4);
  p.at(0, 1) = 6.0; // one live column, three dead
  const ImportanceFactors g = gradients_to_importance(p, NormKind::L1);
  const double raw_mean = (6.0 / 3.0) / 4.0; // column norms (0, 2, 0, 0)
  for (double x : g.diag) {
    CHECK(x > 0.0);
    CHECK(x >= 1e-6 * raw_mean);
  }
  CHECK(g.diag[1] == 2.0);
  CHECK(g.diag[0] == 1e-6 * raw_mean);
}

TEST_CASE("manual importance boundary ratios") {
  std::vector<TokenRole> roles(20, TokenRole::Img);
  for (int i = 0; i < 5; ++i) {
    roles.push_back(TokenRole::Ans);
  }

  const ImportanceFactors none = manual_importance(roles, 0.0, 0.01, 1);
  for (double x : none.diag) {
    CHECK(x == 1.0);
  }

  const ImportanceFactors all = manual_importance(roles, 1.0, 0.25, 1);
  for (std::size_t i = 0; i < roles.size(); ++i) {
    CHECK(all.diag[i] == (roles[i] == TokenRole::Img ? 0.25 : 1.0));
  }

  const ImportanceFactors half = manual_importance(roles, 0.5, 0.01, 2);
  std::size_t low = 0;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (half.diag[i] == 0.01) {
      CHECK(roles[i] == TokenRole::Img);
      ++low;
    }
  }
  CHECK(low == 10);
  CHECK(manual_importance(roles, 0.5, 0.01, 2).diag == half.diag);
}

TEST_CASE("manual importance validates its arguments") {
  const std::vector<TokenRole> roles{TokenRole::Img, TokenRole::Ans};
  CHECK_THROWS_AS(manual_importance(roles, -0.1, 1.0, 1), InvalidRatio);
  CHECK_THROWS_AS(manual_importance(roles, 1.1, 1.0, 1), InvalidRatio);
  CHECK_THROWS_AS(manual_importance(roles, 0.5, 0.0, 1), InvalidRatio);
}

TEST_CASE("branch shape mismatch is rejected") {
  const ModelSpec spec = small_spec(8, 2, 30);
  const LayerWeights w = generate_model(spec)[0];
  CHECK_THROWS_AS(block_loss(Matrix(8, 4), Matrix(8, 5), w, spec), ShapeMismatch);
  CHECK_THROWS_AS(block_backward(Matrix(8, 4), Matrix(8, 5), w, spec), ShapeMismatch);
}
