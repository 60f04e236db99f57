// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "test_oracles.hpp"
#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"

using namespace vlmq;

namespace {

Matrix random_spd(std::mt19937_64 &rng, std::size_t n) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix a(n, n);
  for (double &x : a.data()) {
    x = normal(rng);
  }
  Matrix spd = multiply_abt(a, a);
  for (std::size_t i = 0; i < n; ++i) {
    spd.at(i, i) += 0.5;
  }
  return spd;
}

} // namespace

TEST_CASE("cholesky of identity is identity") {
  const Matrix i3 = Matrix::identity(3);
  const CholeskyFactor f = cholesky(i3);
  CHECK(max_abs_diff(f.lower, i3) == 0.0);
}

TEST_CASE("cholesky matches hand expansion on 2x2") {
  const Matrix a(2, 2, {4.0, 2.0, 2.0, 3.0});
  const CholeskyFactor f = cholesky(a);
  CHECK(f.lower.at(0, 0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(f.lower.at(1, 0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(f.lower.at(1, 1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
  CHECK(f.lower.at(0, 1) == 0.0);
}

TEST_CASE("cholesky of diagonal takes square roots") {
  const Matrix a(2, 2, {9.0, 0.0, 0.0, 16.0});
  const CholeskyFactor f = cholesky(a);
  CHECK(f.lower.at(0, 0) == 3.0);
  CHECK(f.lower.at(1, 1) == 4.0);
}

TEST_CASE("cholesky rejects indefinite and asymmetric input") {
  CHECK_THROWS_AS(cholesky(Matrix(2, 2, {1.0, 2.0, 2.0, 1.0})), NotPositiveDefinite);
  CHECK_THROWS_AS(cholesky(Matrix(2, 2, {1.0, 0.5, 0.0, 1.0})), Error);
}

TEST_CASE("cholesky reconstruction within 1e-10 relative frobenius") {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 2 + rng() % 7;
    const Matrix a = random_spd(rng, n);
    const CholeskyFactor f = cholesky(a);
    const Matrix rec = multiply_abt(f.lower, f.lower);
    CHECK(frobenius_norm(subtract(rec, a)) <= 1e-10 * frobenius_norm(a));
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(f.lower.at(i, i) > 0.0);
    }
  }
}

TEST_CASE("inverse_spd identities") {
  CHECK(max_abs_diff(inverse_spd(Matrix::identity(4)), Matrix::identity(4)) == 0.0);
  const Matrix d(2, 2, {2.0, 0.0, 0.0, 5.0});
  const Matrix inv = inverse_spd(d);
  CHECK(inv.at(0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(inv.at(1, 1) == doctest::Approx(0.2).epsilon(1e-15));
}

TEST_CASE("inverse_spd residual below 1e-8 on random spd") {
  std::mt19937_64 rng(202);
  const Matrix a = random_spd(rng, 6);
  const Matrix inv = inverse_spd(a);
  CHECK(max_abs_diff(multiply(a, inv), Matrix::identity(6)) < 1e-8);
}

TEST_CASE("double inversion returns the original within 1e-6 relative frobenius") {
  std::mt19937_64 rng(303);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix a = random_spd(rng, 5);
    const Matrix back = inverse_spd(inverse_spd(a));
    CHECK(frobenius_norm(subtract(back, a)) <= 1e-6 * frobenius_norm(a));
  }
}

TEST_CASE("upper inverse factor satisfies U^T U = A^-1") {
  std::mt19937_64 rng(404);
  const Matrix a = random_spd(rng, 7);
  const Matrix u = upper_inverse_factor(a);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      CHECK(u.at(i, j) == 0.0);
    }
  }
  const Matrix utu = multiply_atb(u, u);
  CHECK(max_abs_diff(utu, inverse_spd(a)) < 1e-8);
}

TEST_CASE("power iteration finds the dominant axis of a spiked diagonal") {
  const Matrix a(3, 3, {5.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  const Matrix pcs = top_principal_components(a, 1, 100, 9);
  CHECK(std::fabs(pcs.at(0, 0)) == doctest::Approx(1.0).epsilon(1e-8));
  CHECK(std::fabs(pcs.at(1, 0)) < 1e-6);
  CHECK(std::fabs(pcs.at(2, 0)) < 1e-6);
}

TEST_CASE("power iteration matches the jacobi oracle on random psd") {
  std::mt19937_64 rng(505);
  const Matrix a = random_spd(rng, 8);
  const Matrix pcs = top_principal_components(a, 2, 500, 11);
  const testing::EigenResult eig = testing::jacobi_eigen(a);
  for (std::size_t c = 0; c < 2; ++c) {
    const std::vector<double> v = pcs.column(c);
    const double rq = rayleigh_quotient(a, v);
    CHECK(std::fabs(rq - eig.values[c]) <= 1e-4 * std::fabs(eig.values[c]));
    double align = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      align += v[i] * eig.vectors[c][i];
    }
    CHECK(std::fabs(align) == doctest::Approx(1.0).epsilon(1e-3));
  }
}

TEST_CASE("power iteration on identity returns a unit vector with quotient 1") {
  const Matrix pcs = top_principal_components(Matrix::identity(3), 1, 50, 13);
  const std::vector<double> v = pcs.column(0);
  CHECK(norm2(v) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(rayleigh_quotient(Matrix::identity(3), v) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("principal components are pairwise orthonormal") {
  std::mt19937_64 rng(606);
  const Matrix a = random_spd(rng, 6);
  const Matrix pcs = top_principal_components(a, 3, 300, 17);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto vi = pcs.column(i);
    CHECK(norm2(vi) == doctest::Approx(1.0).epsilon(1e-10));
    for (std::size_t j = i + 1; j < 3; ++j) {
      const auto vj = pcs.column(j);
      CHECK(std::fabs(dot(vi, vj)) < 1e-6);
    }
  }
}

TEST_CASE("power iteration is deterministic per seed") {
  std::mt19937_64 rng(707);
  const Matrix a = random_spd(rng, 5);
  const Matrix p1 = top_principal_components(a, 2, 100, 23);
  const Matrix p2 = top_principal_components(a, 2, 100, 23);
  CHECK(bitwise_equal(p1, p2));
}
