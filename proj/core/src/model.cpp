// SPDX-License-Identifier: Apache-2.0
#include "vlmq/model.hpp"

#include <cmath>
#include <random>

#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"

namespace vlmq {

void ModelSpec::validate() const {
  if (num_layers < 1) {
    throw InvalidSpec("num_layers must be >= 1");
  }
  if (d_model < 1 || num_heads < 1 || head_dim < 1 || d_ff < 1) {
    throw InvalidSpec("all dims must be >= 1");
  }
  if (d_model % num_heads != 0) {
    throw InvalidSpec("d_model must be divisible by num_heads");
  }
  if (num_heads * head_dim != d_model) {
    throw InvalidSpec("d_model must equal num_heads * head_dim");
  }
  if (!(norm_eps > 0.0)) {
    throw InvalidSpec("norm_eps must be positive");
  }
}

void LayerWeights::validate(const ModelSpec &spec) const {
  const std::size_t ci = spec.d_model;
  auto check = [&](const Matrix &m, std::size_t r, std::size_t c, const char *name) {
    if (m.rows() != r || m.cols() != c) {
      throw ShapeMismatch(std::string(name) + " expected " + std::to_string(r) + "x" +
                          std::to_string(c));
    }
    if (!all_finite(m)) {
      throw Error(ErrorKind::Numerical, std::string("non-finite weights in ") + name);
    }
  };
  check(q, ci, ci, "q");
  check(k, ci, ci, "k");
  check(v, ci, ci, "v");
  check(o, ci, ci, "o");
  check(up, spec.d_ff, ci, "up");
  check(gate, spec.d_ff, ci, "gate");
  check(down, ci, spec.d_ff, "down");
  if (attn_norm.size() != ci || ffn_norm.size() != ci) {
    throw ShapeMismatch("norm gain length");
  }
}

Matrix rms_norm(const Matrix &x, const std::vector<double> &gains, double eps) {
  if (gains.size() != x.rows()) {
    throw ShapeMismatch("rms_norm gains");
  }
  Matrix out(x.rows(), x.cols());
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double ss = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      ss += x.at(r, c) * x.at(r, c);
    }
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.rows()) + eps);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      out.at(r, c) = x.at(r, c) * inv * gains[r];
    }
  }
  return out;
}

namespace {

void apply_rope_inplace(Matrix &z, const ModelSpec &spec, bool inverse) {
  // per-head pairwise rotations; angle depends on token position
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

} // namespace

namespace detail {

ForwardResult attn_forward_opts(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                                bool capture, bool causal) {
  const std::size_t ci = spec.d_model;
  const std::size_t n = x.cols();
  if (x.rows() != ci) {
    throw ShapeMismatch("attn_forward input rows " + std::to_string(x.rows()));
  }

  const Matrix xn = rms_norm(x, w.attn_norm, spec.norm_eps);
  Matrix zq = multiply(w.q, xn);
  Matrix zk = multiply(w.k, xn);
  const Matrix zv = multiply(w.v, xn);
  if (spec.rope_enabled) {
    apply_rope_inplace(zq, spec, false);
    apply_rope_inplace(zk, spec, false);
  }

  const std::size_t hd = spec.head_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Matrix context(ci, n);
  std::vector<double> scores(n);

  for (std::size_t h = 0; h < spec.num_heads; ++h) {
    const std::size_t base = h * hd;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t limit = causal ? i + 1 : n;
      double mx = -1e300;
      for (std::size_t j = 0; j < limit; ++j) {
        double s = 0.0;
        for (std::size_t d = 0; d < hd; ++d) {
          s += zq.at(base + d, i) * zk.at(base + d, j);
        }
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double denom = 0.0;
      for (std::size_t j = 0; j < limit; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        denom += scores[j];
      }
      for (std::size_t d = 0; d < hd; ++d) {
        double acc = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          acc += (scores[j] / denom) * zv.at(base + d, j);
        }
        context.at(base + d, i) = acc;
      }
    }
  }

  ForwardResult res;
  res.out = add(x, multiply(w.o, context));
  if (capture) {
    res.trace.qkv_input = xn;
    res.trace.o_input = context;
    res.trace.attn_out = res.out;
  }
  return res;
}

} // namespace detail

ForwardResult attn_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                           bool capture) {
  return detail::attn_forward_opts(x, w, spec, capture, /*causal=*/true);
}

ForwardResult mlp_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                          bool capture) {
  if (x.rows() != spec.d_model) {
    throw ShapeMismatch("mlp_forward input rows");
  }
  const Matrix xn = rms_norm(x, w.ffn_norm, spec.norm_eps);
  const Matrix up = multiply(w.up, xn);
  const Matrix gate = multiply(w.gate, xn);
  Matrix gated(spec.d_ff, x.cols());
  for (std::size_t i = 0; i < gated.size(); ++i) {
    const double g = gate.data()[i];
    const double silu = g / (1.0 + std::exp(-g));
    gated.data()[i] = silu * up.data()[i];
  }
  ForwardResult res;
  res.out = add(x, multiply(w.down, gated));
  if (capture) {
    res.trace.upgate_input = xn;
    res.trace.down_input = gated;
    res.trace.layer_out = res.out;
  }
  return res;
}

ForwardResult layer_forward(const Matrix &x, const LayerWeights &w, const ModelSpec &spec,
                            bool capture, BranchTag branch) {
  ForwardResult attn = attn_forward(x, w, spec, capture);
  ForwardResult mlp = mlp_forward(attn.out, w, spec, capture);
  ForwardResult res;
  res.out = mlp.out;
  if (capture) {
    res.trace = std::move(attn.trace);
    res.trace.branch = branch;
    res.trace.upgate_input = std::move(mlp.trace.upgate_input);
    res.trace.down_input = std::move(mlp.trace.down_input);
    res.trace.layer_out = res.out;
  }
  return res;
}

std::vector<LayerWeights> generate_model(const ModelSpec &spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto init = [&](std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (double &x : m.data()) {
      x = normal(rng) * scale;
    }
    return m;
  };

  std::vector<LayerWeights> layers;
  layers.reserve(spec.num_layers);
  for (std::size_t l = 0; l < spec.num_layers; ++l) {
    LayerWeights w;
    w.q = init(spec.d_model, spec.d_model);
    w.k = init(spec.d_model, spec.d_model);
    w.v = init(spec.d_model, spec.d_model);
    w.o = init(spec.d_model, spec.d_model);
    w.up = init(spec.d_ff, spec.d_model);
    w.gate = init(spec.d_ff, spec.d_model);
    w.down = init(spec.d_model, spec.d_ff);
    w.attn_norm.assign(spec.d_model, 1.0);
    w.ffn_norm.assign(spec.d_model, 1.0);
    w.validate(spec);
    layers.push_back(std::move(w));
  }
  return layers;
}

} // namespace vlmq
