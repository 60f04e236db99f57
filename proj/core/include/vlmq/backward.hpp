// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vlmq/calib.hpp"
#include "vlmq/matrix.hpp"
#include "vlmq/model.hpp"

namespace vlmq {

/// Squared error between the attention-stream outputs of the full-precision
/// and quantized-path branches (sum of squares over all entries).
struct BlockLoss {
  double value = 0.0;
  Matrix target; // Attn(X), full-precision branch
  Matrix actual; // Attn(X_hat), quantized-path branch
};

/// Gradients of the block loss w.r.t. each projection output on the
/// quantized-path branch; every matrix is (out_channels x N).
struct ProjectionGradients {
  Matrix q, k, v, o;
};

enum class NormKind : std::uint8_t { L1 = 0, L2 = 1 };
enum class ImportanceSource : std::uint8_t { Gradient = 0, Manual = 1 };

/// Per-token nonnegative diagonal weighting for the Hessian.
struct ImportanceFactors {
  std::vector<double> diag;
  NormKind norm_kind = NormKind::L1;
  ImportanceSource source = ImportanceSource::Gradient;
};

ImportanceFactors unit_importance(std::size_t n);

BlockLoss block_loss(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                     const ModelSpec &spec);

/// Hand-written backward through the attention block (chain rule through the
/// o projection, attention-weight/value product, softmax Jacobian and scaled
/// dot-product, per head).
ProjectionGradients block_backward(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                                   const ModelSpec &spec);

/// Column norms of the raw gradients: L1 uses mean |P| per column, L2 the
/// root-mean-square. Entries are floored at 1e-6 * mean to keep the weighted
/// Hessian full-rank; an exactly-zero gradient matrix yields all-ones.
ImportanceFactors gradients_to_importance(const Matrix &p, NormKind kind);

/// Pilot-study mode: a uniformly random floor(li_ratio * N_v) subset of
/// vision tokens gets li_value, every other token 1.0. Deterministic per seed.
ImportanceFactors manual_importance(const std::vector<TokenRole> &roles, double li_ratio,
                                    double li_value, std::uint64_t seed);

namespace detail {
// Loss as a function of an additive perturbation on one projection output;
// drives the finite-difference and directional-derivative oracles.
enum class Projection : int { Q = 0, K = 1, V = 2, O = 3 };
double block_loss_with_offset(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                              const ModelSpec &spec, Projection proj, const Matrix &offset);
} // namespace detail

} // namespace vlmq
