// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>

#include "vlmq/matrix.hpp"

namespace vlmq {

struct CholeskyFactor {
  std::size_t dim = 0;
  Matrix lower; // L with L*L^T reconstructing the input
};

Matrix multiply(const Matrix &a, const Matrix &b);
Matrix multiply_abt(const Matrix &a, const Matrix &b); // A * B^T
Matrix multiply_atb(const Matrix &a, const Matrix &b); // A^T * B
Matrix add(const Matrix &a, const Matrix &b);
Matrix subtract(const Matrix &a, const Matrix &b);
Matrix scaled(const Matrix &a, double factor);

double frobenius_norm(const Matrix &a);
double max_abs(const Matrix &a);
double max_abs_diff(const Matrix &a, const Matrix &b);
double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> a);

bool is_symmetric(const Matrix &a, double tol = 1e-9);
void ensure_finite(const Matrix &m, const char *what);

/// Cholesky factorization of a symmetric positive-definite matrix.
/// Throws NotPositiveDefinite when a pivot is <= 0 (insufficient dampening
/// upstream); symmetry is checked to 1e-9 relative.
CholeskyFactor cholesky(const Matrix &a);

void solve_lower_inplace(const Matrix &lower, std::span<double> b);            // L y = b
void solve_lower_transposed_inplace(const Matrix &lower, std::span<double> b); // L^T x = y

/// SPD inverse via Cholesky and two triangular solves per column.
Matrix inverse_spd(const Matrix &a);

/// Upper-triangular U with U^T U = A^-1 (the factor whose rows drive the
/// column-wise error compensation loop).
Matrix upper_inverse_factor(const Matrix &spd);

/// Top-k eigenvectors of a symmetric PSD matrix by power iteration with
/// deflation; columns are orthonormal, deterministic for a fixed seed.
Matrix top_principal_components(const Matrix &a, std::size_t k, std::size_t iters,
                                std::uint64_t seed);

double rayleigh_quotient(const Matrix &a, std::span<const double> v);

} // namespace vlmq
