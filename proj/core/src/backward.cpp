// SPDX-License-Identifier: Apache-2.0
#include "vlmq/backward.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/threads.hpp"

namespace vlmq {

ImportanceFactors unit_importance(std::size_t n) {
  ImportanceFactors g;
  g.diag.assign(n, 1.0);
  g.source = ImportanceSource::Manual;
  return g;
}

namespace {

void rope_rotate_inplace(Matrix &z, const ModelSpec &spec, bool inverse) {
  const std::size_t hd = spec.head_dim;
  for (std::size_t h = 0; h < spec.num_heads; ++h) {
    for (std::size_t pos = 0; pos < z.cols(); ++pos) {
      for (std::size_t p = 0; p + 1 < hd; p += 2) {
        const double theta =
          static_cast<double>(pos) *
          std::pow(10000.0, -static_cast<double>(p) / static_cast<double>(hd));
        const double c = std::cos(theta);
        const double s = inverse ? -std::sin(theta) : std::sin(theta);
        const std::size_t r0 = h * hd + p;
        const std::size_t r1 = r0 + 1;
        const double a = z.at(r0, pos);
        const double b = z.at(r1, pos);
        z.at(r0, pos) = a * c - b * s;
        z.at(r1, pos) = a * s + b * c;
      }
    }
  }
}

struct BlockForward {
  Matrix xn;                // RMSNorm output, shared q/k/v input
  Matrix zq, zk, zv;        // projection outputs (pre-rope for q/k)
  Matrix zq_rot, zk_rot;    // post-rope (aliases zq/zk when rope disabled)
  std::vector<Matrix> attn; // per-head attention weights, N x N, masked zeros
  Matrix context;           // o input
  Matrix out;               // block output (residual included)
};

// Forward through the attention block with optional additive offsets on the
// projection outputs; arithmetic matches attn_forward exactly so gradients
// and finite differences are taken on the same map.
BlockForward block_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                           const Matrix *off_q = nullptr, const Matrix *off_k = nullptr,
                           const Matrix *off_v = nullptr, const Matrix *off_o = nullptr) {
  const std::size_t ci = spec.d_model;
  const std::size_t n = x.cols();
  if (x.rows() != ci) {
    throw ShapeMismatch("block_forward input rows");
  }

  BlockForward f;
  f.xn = rms_norm(x, w.attn_norm, spec.norm_eps);
  f.zq = multiply(w.q, f.xn);
  f.zk = multiply(w.k, f.xn);
  f.zv = multiply(w.v, f.xn);
  if (off_q) {
    f.zq = add(f.zq, *off_q);
  }
  if (off_k) {
    f.zk = add(f.zk, *off_k);
  }
  if (off_v) {
    f.zv = add(f.zv, *off_v);
  }
  f.zq_rot = f.zq;
  f.zk_rot = f.zk;
  if (spec.rope_enabled) {
    rope_rotate_inplace(f.zq_rot, spec, false);
    rope_rotate_inplace(f.zk_rot, spec, false);
  }

  const std::size_t hd = spec.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  f.context = Matrix(ci, n);
  f.attn.assign(spec.num_heads, Matrix(n, n));
  std::vector<double> scores(n);

  for (std::size_t h = 0; h < spec.num_heads; ++h) {
    const std::size_t base = h * hd;
    Matrix &a = f.attn[h];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = i + 1; // causal
      double mx = -1e300;
      for (std::size_t j = 0; j < limit; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) {
          s += f.zq_rot.at(base + d, i) * f.zk_rot.at(base + d, j);
        }
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      for (std::size_t j = 0; j < limit; ++j) {
        a.at(i, j) = scores[j] / denom;
      }
      for (std::size_t d = 0; d < hd; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          acc += a.at(i, j) * f.zv.at(base + d, j);
        }
        f.context.at(base + d, i) = acc;
      }
    }
  }

  Matrix zo = multiply(w.o, f.context);
  if (off_o) {
    zo = add(zo, *off_o);
  }
  f.out = add(x, zo);
  return f;
}

double sq_diff(const Matrix &a, const Matrix &b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s;
}

} // namespace

BlockLoss block_loss(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                     const ModelSpec &spec) {
  if (!x.same_shape(x_hat)) {
    throw ShapeMismatch("block_loss branch inputs");
  }
  BlockLoss loss;
  loss.target = attn_forward(x, w, spec).out;
  loss.actual = attn_forward(x_hat, w, spec).out;
  loss.value = sq_diff(loss.target, loss.actual);
  return loss;
}

ProjectionGradients block_backward(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                                   const ModelSpec &spec) {
  if (!x.same_shape(x_hat)) {
    throw ShapeMismatch("block_backward branch inputs");
  }
  const std::size_t ci = spec.d_model;
  const std::size_t n = x.cols();
  const std::size_t hd = spec.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  const Matrix target = attn_forward(x, w, spec).out;
  const BlockForward f = block_forward(x_hat, w, spec);

  ProjectionGradients g;
  // d loss / d (o output); the residual stream feeds x_hat directly, so the
  // o projection output receives the block-output gradient unchanged
  g.o = Matrix(ci, n);
  for (std::size_t i = 0; i < g.o.size(); ++i) {
    g.o.data()[i] = 2.0 * (f.out.data()[i] - target.data()[i]);
  }

  const Matrix d_context = multiply_atb(w.o, g.o); // W_o^T * dZo
  Matrix dq_rot(ci, n), dk_rot(ci, n);
  g.v = Matrix(ci, n);

  std::vector<double> da_row, ds_row;
  for (std::size_t h = 0; h < spec.num_heads; ++h) {
    const std::size_t base = h * hd;
    const Matrix &a = f.attn[h];
    da_row.assign(n, 0.0);
    ds_row.assign(n, 0.0);

    // dV: context[:, i] = sum_j A_ij V[:, j]
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t d = 0; d < hd; ++d) {
        double acc = 0.0;
        for (std::size_t i = j; i < n; ++i) { // A_ij = 0 for j > i
          acc += a.at(i, j) * d_context.at(base + d, i);
        }
        g.v.at(base + d, j) = acc;
      }
    }

    // softmax rows and scaled dot-product
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = i + 1;
      double inner = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        double acc = 0.0;
        for (std::size_t d = 0; d < hd; ++d) {
          acc += d_context.at(base + d, i) * f.zv.at(base + d, j);
        }
        da_row[j] = acc;
        inner += a.at(i, j) * acc;
      }
      for (std::size_t j = 0; j < limit; ++j) {
        ds_row[j] = a.at(i, j) * (da_row[j] - inner);
      }
      for (std::size_t d = 0; d < hd; ++d) {
        double accq = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          accq += ds_row[j] * f.zk_rot.at(base + d, j);
        }
        dq_rot.at(base + d, i) = accq * scale;
      }
      for (std::size_t j = 0; j < limit; ++j) {
        const double dsij = ds_row[j] * scale;
        for (std::size_t d = 0; d < hd; ++d) {
          dk_rot.at(base + d, j) += dsij * f.zq_rot.at(base + d, i);
        }
      }
    }
  }

  if (spec.rope_enabled) {
    // rotations are orthogonal; gradients w.r.t. pre-rope outputs rotate back
    rope_rotate_inplace(dq_rot, spec, true);
    rope_rotate_inplace(dk_rot, spec, true);
  }
  g.q = std::move(dq_rot);
  g.k = std::move(dk_rot);
  return g;
}

ImportanceFactors gradients_to_importance(const Matrix &p, NormKind kind) {
  if (!all_finite(p)) {
    throw Error(ErrorKind::Numerical, "gradients_to_importance: non-finite gradients");
  }
  const std::size_t co = p.rows();
  const std::size_t n = p.cols();
  ImportanceFactors g;
  g.norm_kind = kind;
  g.source = ImportanceSource::Gradient;
  g.diag.resize(n);

  double mean = 0.0;
  for (std::size_t c = 0; c < n; ++c) {
    double acc = 0.0;
    for (std::size_t r = 0; r < co; ++r) {
      const double x = p.at(r, c);
      acc += kind == NormKind::L1 ? std::fabs(x) : x * x;
    }
    acc /= static_cast<double>(co);
    g.diag[c] = kind == NormKind::L1 ? acc : std::sqrt(acc);
    mean += g.diag[c];
  }
  mean /= static_cast<double>(n);

  if (mean == 0.0) {
    // dead block (both branches identical): uniform importance
    std::fill(g.diag.begin(), g.diag.end(), 1.0);
    return g;
  }
  const double floor = 1e-6 * mean;
  for (double &x : g.diag) {
    x = std::max(x, floor);
  }
  return g;
}

ImportanceFactors manual_importance(const std::vector<TokenRole> &roles, double li_ratio,
                                    double li_value, std::uint64_t seed) {
  if (li_ratio < 0.0 || li_ratio > 1.0) {
    throw InvalidRatio("li_ratio must be in [0, 1]");
  }
  if (!(li_value > 0.0)) {
    throw InvalidRatio("li_value must be positive");
  }
  ImportanceFactors g;
  g.source = ImportanceSource::Manual;
  g.diag.assign(roles.size(), 1.0);

  std::vector<std::size_t> vision_idx;
  for (std::size_t i = 0; i < roles.size(); ++i) {
    if (modality_of(roles[i]) == Modality::Vision) {
      vision_idx.push_back(i);
    }
  }
  const std::size_t k =
    static_cast<std::size_t>(li_ratio * static_cast<double>(vision_idx.size()));
  std::mt19937_64 rng(seed);
  std::shuffle(vision_idx.begin(), vision_idx.end(), rng);
  for (std::size_t i = 0; i < k; ++i) {
    g.diag[vision_idx[i]] = li_value;
  }
  return g;
}

namespace detail {

double block_loss_with_offset(const Matrix &x, const Matrix &x_hat, const LayerWeights &w,
                              const ModelSpec &spec, Projection proj, const Matrix &offset) {
  const Matrix target = attn_forward(x, w, spec).out;
  const Matrix *offs[4] = {nullptr, nullptr, nullptr, nullptr};
  offs[static_cast<int>(proj)] = &offset;
  const BlockForward f = block_forward(x_hat, w, spec, offs[0], offs[1], offs[2], offs[3]);
  return sq_diff(f.out, target);
}

} // namespace detail

} // namespace vlmq
