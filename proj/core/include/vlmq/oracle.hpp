// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "vlmq/matrix.hpp"
#include "vlmq/solver.hpp"

namespace vlmq::oracle {

/// Dense linear solve by Gaussian elimination with partial pivoting.
/// Deliberately independent of the Cholesky path it cross-checks.
std::vector<double> gaussian_solve(Matrix a, std::vector<double> b);

/// Brute-force solution of the constrained weighted least-squares problem:
/// minimize || (dw X_hat - r) sqrt(G) ||^2 subject to dw_q = w_hat_q - w_q,
/// with r = w X_fp - w X_hat, via dense normal equations on the free
/// coordinates. Small dims only; test oracle.
std::vector<double> kkt_oracle(std::span<const double> w, const Matrix &x_hat, const Matrix &x_fp,
                               std::span<const double> g, std::size_t q, double w_hat_q);

/// G-weighted objective value || (dw X_hat - r) sqrt(G) ||^2 for a candidate
/// update row.
double weighted_objective(std::span<const double> w, std::span<const double> dw,
                          const Matrix &x_hat, const Matrix &x_fp, std::span<const double> g);

/// Naive reference for the layer solvers: re-inverts the dampened Hessian
/// restricted to the remaining columns after every step instead of reusing
/// the Cholesky factor. Same ordering, grouping and rounding rules.
QuantizedLayerResult reference_quantize_layer(const Matrix &w, const HessianState &state,
                                              const SolveConfig &cfg);

/// Round-to-nearest baseline: per-row (or per-group) params, no compensation.
QuantizedLayerResult rtn_quantize_layer(const Matrix &w, const SolveConfig &cfg);

} // namespace vlmq::oracle
