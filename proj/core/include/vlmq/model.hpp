// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "vlmq/matrix.hpp"

namespace vlmq {

/// Architecture of the toy decoder-only calibration target.
struct ModelSpec {
  std::size_t num_layers = 2;
  std::size_t d_model = 16;   // in-channel count of every attention linear
  std::size_t num_heads = 2;
  std::size_t head_dim = 8;   // d_model = num_heads * head_dim
  std::size_t d_ff = 32;
  double norm_eps = 1e-6;
  bool rope_enabled = false;
  std::uint64_t seed = 0;

  void validate() const; // throws InvalidSpec
};

/// One decoding layer: pre-norm attention (q/k/v/o) and gated FFN
/// (up/gate/down) with RMSNorm gains. Norm layers are never quantized.
struct LayerWeights {
  Matrix q, k, v, o;      // d_model x d_model
  Matrix up, gate;        // d_ff x d_model
  Matrix down;            // d_model x d_ff
  std::vector<double> attn_norm, ffn_norm; // RMSNorm gains, length d_model

  void validate(const ModelSpec &spec) const;
};

enum class BranchTag { FullPrecision, QuantizedPath };

/// Captured per-linear inputs from one forward pass. Each captured input is
/// the exact matrix hitting the named linear (post-norm).
struct ActivationTrace {
  BranchTag branch = BranchTag::FullPrecision;
  Matrix qkv_input;    // shared input of q/k/v
  Matrix o_input;      // attention context hitting o
  Matrix upgate_input; // shared input of up/gate
  Matrix down_input;   // gated product hitting down
  Matrix attn_out;     // attention-stream output (residual included)
  Matrix layer_out;
};

Matrix rms_norm(const Matrix &x, const std::vector<double> &gains, double eps);

struct ForwardResult {
  Matrix out;
  ActivationTrace trace;
};

/// Attention stream: out = X + o * MHSA(RMSNorm(X)) with causal masking and
/// 1/sqrt(head_dim) scaling. When capture is set the trace records the shared
/// q/k/v input and the o input.
ForwardResult attn_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                           bool capture = false);

/// FFN stream: out = X + down * (silu(gate * Xn) .* (up * Xn)), Xn = RMSNorm(X).
ForwardResult mlp_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                          bool capture = false);

/// Full layer: attention stream then FFN stream.
ForwardResult layer_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                            bool capture = false, BranchTag branch = BranchTag::FullPrecision);

/// Deterministic seeded init: every projection N(0, 1/fan_in), norm gains 1.
std::vector<LayerWeights> generate_model(const ModelSpec &spec);

namespace detail {
// Test hook: the permutation-equivariance property is stated for the
// mask-free setting.
ForwardResult attn_forward_opts(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                                bool capture, bool causal);
} // namespace detail

} // namespace vlmq
