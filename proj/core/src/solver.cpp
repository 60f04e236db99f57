// SPDX-License-Identifier: Apache-2.0
#include "vlmq/solver.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/threads.hpp"

namespace vlmq {

std::string to_string(Method m) {
  switch (m) {
  case Method::GPTQ: return "gptq";
  case Method::GPTAQ: return "gptaq";
  case Method::VLMQ: return "vlmq";
  }
  return "?";
}

std::string to_string(Precursor p) { return p == Precursor::GPTAQ ? "gptaq" : "gptq"; }

HessianState::HessianState(std::size_t dim)
  : dim_(dim), h_(dim, dim), h_unit_(dim, dim), cross_(dim, dim) {}

const Matrix &HessianState::cross() const {
  if (!has_cross_) {
    throw MissingCrossTerm("state has no full-precision cross accumulator");
  }
  return cross_;
}

HessianState accumulate_hessian(HessianState state, const Matrix &x_hat, const Matrix *x_fp,
                                const ImportanceFactors *g) {
  const std::size_t dim = x_hat.rows();
  const std::size_t n = x_hat.cols();
  if (state.dim_ == 0) {
    state = HessianState(dim);
  }
  if (state.dim_ != dim) {
    throw ShapeMismatch("hessian accumulate dim " + std::to_string(dim));
  }
  if (x_fp && (!x_fp->same_shape(x_hat))) {
    throw ShapeMismatch("cross-term activation shape");
  }
  if (g) {
    if (g->diag.size() != n) {
      throw ShapeMismatch("importance length " + std::to_string(g->diag.size()));
    }
    for (double w : g->diag) {
      if (!(w >= 0.0) || !std::isfinite(w)) {
        throw Error(ErrorKind::Validation, "importance weights must be nonnegative finite");
      }
    }
    state.weighted_ = true;
  }

  for (std::size_t t = 0; t < n; ++t) {
    const double weight = g ? g->diag[t] : 1.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double wxi = weight * x_hat.at(i, t);
      const double xi = x_hat.at(i, t);
      state.h_.at(i, i) += wxi * x_hat.at(i, t);
      state.h_unit_.at(i, i) += xi * x_hat.at(i, t);
      for (std::size_t j = i + 1; j < dim; ++j) {
        const double wv = wxi * x_hat.at(j, t);
        state.h_.at(i, j) += wv;
        state.h_.at(j, i) += wv;
        const double uv = xi * x_hat.at(j, t);
        state.h_unit_.at(i, j) += uv;
        state.h_unit_.at(j, i) += uv;
      }
      if (x_fp) {
        for (std::size_t j = 0; j < dim; ++j) {
          state.cross_.at(i, j) += wxi * x_fp->at(j, t);
        }
      }
    }
  }
  if (x_fp) {
    state.has_cross_ = true;
  }
  state.samples_ += 1;
  ensure_finite(state.h_, "hessian accumulator");
  return state;
}

Matrix dampen(const Matrix &h, double damp) {
  if (h.rows() != h.cols()) {
    throw ShapeMismatch("dampen: square matrix expected");
  }
  double mean = 0.0;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    mean += h.at(i, i);
  }
  mean /= static_cast<double>(h.rows());
  if (!(mean > 0.0)) {
    throw ZeroHessian("mean diagonal is " + std::to_string(mean));
  }
  Matrix out = h;
  const double lift = damp * mean;
  for (std::size_t i = 0; i < h.rows(); ++i) {
    out.at(i, i) += lift;
  }
  return out;
}

void SolveConfig::validate() const {
  if (bits < 2 || bits > 8) {
    throw Error(ErrorKind::Validation, "bits must be in [2, 8]");
  }
  if (!(damp > 0.0)) {
    throw Error(ErrorKind::Validation, "damp must be > 0");
  }
  if (lazy_block < 1) {
    throw Error(ErrorKind::Validation, "lazy_block must be >= 1");
  }
  if (group_size == 0 || group_size < -1) {
    throw Error(ErrorKind::Validation, "group_size must be -1 or >= 1");
  }
}

const QuantParams &QuantizedLayerResult::param_at(std::size_t row, std::size_t orig_col) const {
  // visit position of the original column, then its group
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    if (perm[pos] == orig_col) {
      return params[row][pos / static_cast<std::size_t>(group_size)];
    }
  }
  throw ShapeMismatch("param_at: column out of range");
}

namespace detail {

std::vector<std::uint32_t> activation_order(const Matrix &h, bool act_order) {
  std::vector<std::uint32_t> perm(h.rows());
  std::iota(perm.begin(), perm.end(), 0U);
  if (!act_order) {
    return perm;
  }
  std::stable_sort(perm.begin(), perm.end(), [&](std::uint32_t a, std::uint32_t b) {
    return h.at(a, a) > h.at(b, b); // ties keep ascending index
  });
  return perm;
}

} // namespace detail

namespace {

Matrix permute_square(const Matrix &m, const std::vector<std::uint32_t> &perm) {
  const std::size_t n = perm.size();
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      out.at(i, j) = m.at(perm[i], perm[j]);
    }
  }
  return out;
}

double quadratic_form(std::span<const double> d, const Matrix &h) {
  double acc = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d[i] == 0.0) {
      continue;
    }
    double row = 0.0;
    for (std::size_t j = 0; j < d.size(); ++j) {
      row += h.at(i, j) * d[j];
    }
    acc += d[i] * row;
  }
  return acc;
}

// Shared column loop: residual fold (when enabled) followed by the
// Cholesky-driven compensation sweep, each row independent.
QuantizedLayerResult quantize_layer_engine(const Matrix &w, const HessianState &state,
                                           const SolveConfig &cfg, bool use_residual) {
  cfg.validate();
  const std::size_t ci = w.cols();
  const std::size_t co = w.rows();
  if (state.dim() != ci) {
    throw ShapeMismatch("weight columns " + std::to_string(ci) + " vs hessian dim " +
                        std::to_string(state.dim()));
  }

  const Matrix &h = state.h();
  const Matrix hd = dampen(h, cfg.damp);
  const std::vector<std::uint32_t> perm = detail::activation_order(h, cfg.act_order);
  const Matrix hdp = permute_square(hd, perm);
  const Matrix upper = upper_inverse_factor(hdp); // U^T U = hdp^-1

  Matrix residual_proj; // rows: w (cross^T - h), the residual hitting X^T
  if (use_residual) {
    residual_proj = multiply(w, subtract(state.cross().transposed(), h));
  }

  const std::size_t group_eff =
    cfg.group_size < 0 ? ci : std::min<std::size_t>(static_cast<std::size_t>(cfg.group_size), ci);
  std::size_t lazy = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.lazy_block));
  if (group_eff < ci) {
    // block boundaries aligned to group heads so params are fitted on fully
    // compensated values
    lazy = std::max(group_eff, (lazy / group_eff) * group_eff);
  }

  QuantizedLayerResult res;
  res.w_hat = Matrix(co, ci);
  res.codes.assign(co, std::vector<std::uint8_t>(ci, 0));
  res.params.resize(co);
  res.perm = perm;
  res.group_size = static_cast<int>(group_eff);
  res.row_sq_error_weighted.assign(co, 0.0);
  res.row_sq_error_unweighted.assign(co, 0.0);

  parallel_for(co, [&](std::size_t r) {
    std::vector<double> wp(ci);
    for (std::size_t j = 0; j < ci; ++j) {
      wp[j] = w.at(r, perm[j]);
    }

    RowQuantizer rq(ci, cfg.bits, static_cast<int>(group_eff));
    if (group_eff == ci) {
      // per-channel params are static: fitted on the original row, before
      // the residual fold and any compensation
      rq.begin_column(0, wp);
    }

    if (use_residual && ci > 1) {
      // one-shot correction over the not-yet-quantized suffix {1..}:
      // t = v_R (U_R^T U_R) with U_R the trailing block of the factor
      std::vector<double> vp(ci), a(ci, 0.0);
      for (std::size_t j = 0; j < ci; ++j) {
        vp[j] = residual_proj.at(r, perm[j]);
      }
      for (std::size_t i = 1; i < ci; ++i) {
        double acc = 0.0;
        for (std::size_t k = i; k < ci; ++k) {
          acc += vp[k] * upper.at(i, k);
        }
        a[i] = acc;
      }
      for (std::size_t j = 1; j < ci; ++j) {
        double t = 0.0;
        for (std::size_t i = 1; i <= j; ++i) {
          t += a[i] * upper.at(i, j);
        }
        wp[j] += t;
      }
    }

    std::vector<std::uint8_t> codes_visit(ci, 0);
    std::vector<double> err(lazy, 0.0);

    for (std::size_t b0 = 0; b0 < ci; b0 += lazy) {
      const std::size_t b1 = std::min(ci, b0 + lazy);
      for (std::size_t qcol = b0; qcol < b1; ++qcol) {
        rq.begin_column(qcol, wp);
        const auto [code, deq] = rq.quantize(qcol, wp[qcol]);
        const double e = (wp[qcol] - deq) / upper.at(qcol, qcol);
        wp[qcol] = deq;
        codes_visit[qcol] = code;
        for (std::size_t j = qcol + 1; j < b1; ++j) {
          wp[j] -= e * upper.at(qcol, j);
        }
        err[qcol - b0] = e;
      }
      for (std::size_t j = b1; j < ci; ++j) {
        double upd = 0.0;
        for (std::size_t qcol = b0; qcol < b1; ++qcol) {
          upd += err[qcol - b0] * upper.at(qcol, j);
        }
        wp[j] -= upd;
      }
    }

    std::vector<double> delta(ci);
    for (std::size_t j = 0; j < ci; ++j) {
      res.w_hat.at(r, perm[j]) = wp[j];
      res.codes[r][perm[j]] = codes_visit[j];
    }
    for (std::size_t c = 0; c < ci; ++c) {
      delta[c] = res.w_hat.at(r, c) - w.at(r, c);
    }
    res.params[r] = rq.group_params();
    res.row_sq_error_weighted[r] = quadratic_form(delta, h);
    res.row_sq_error_unweighted[r] = quadratic_form(delta, state.h_unit());
  });

  ensure_finite(res.w_hat, "quantized weights");
  return res;
}

} // namespace

QuantizedLayerResult quantize_layer_gptq(const Matrix &w, const HessianState &state,
                                         const SolveConfig &cfg) {
  return quantize_layer_engine(w, state, cfg, /*use_residual=*/false);
}

QuantizedLayerResult quantize_layer_gptaq(const Matrix &w, const HessianState &state,
                                          const SolveConfig &cfg) {
  if (state.weighted()) {
    throw Error(ErrorKind::Validation, "gptaq expects unit importance accumulation");
  }
  if (!state.has_cross()) {
    throw MissingCrossTerm("gptaq requires the full-precision cross accumulator");
  }
  return quantize_layer_engine(w, state, cfg, /*use_residual=*/true);
}

QuantizedLayerResult quantize_layer_vlmq(const Matrix &w, const HessianState &state,
                                         const SolveConfig &cfg) {
  if (cfg.precursor == Precursor::GPTAQ) {
    if (!state.has_cross()) {
      throw MissingCrossTerm("vlmq with gptaq precursor requires the cross accumulator");
    }
    return quantize_layer_engine(w, state, cfg, /*use_residual=*/true);
  }
  return quantize_layer_engine(w, state, cfg, /*use_residual=*/false);
}

std::vector<double> closed_form_column_update(const Matrix &h, std::span<const double> v,
                                              std::size_t q, double delta_q) {
  const std::size_t n = h.rows();
  if (h.cols() != n || v.size() != n || q >= n) {
    throw ShapeMismatch("closed_form_column_update inputs");
  }
  const Matrix inv = inverse_spd(h);
  std::vector<double> delta(n);
  const double lead = delta_q / inv.at(q, q);
  for (std::size_t j = 0; j < n; ++j) {
    delta[j] = lead * inv.at(q, j);
  }
  if (n > 1) {
    Matrix h_rest(n - 1, n - 1);
    std::vector<double> v_rest(n - 1);
    std::vector<std::size_t> map;
    map.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      if (i != q) {
        map.push_back(i);
      }
    }
    for (std::size_t i = 0; i < n - 1; ++i) {
      v_rest[i] = v[map[i]];
      for (std::size_t j = 0; j < n - 1; ++j) {
        h_rest.at(i, j) = h.at(map[i], map[j]);
      }
    }
    const Matrix inv_rest = inverse_spd(h_rest);
    for (std::size_t j = 0; j < n - 1; ++j) {
      double t = 0.0;
      for (std::size_t i = 0; i < n - 1; ++i) {
        t += v_rest[i] * inv_rest.at(i, j);
      }
      delta[map[j]] += t;
    }
  }
  return delta;
}

std::vector<PcaPoint> hessian_pca_export(const HessianState &state, const Matrix &activations,
                                         const std::vector<TokenRole> &roles,
                                         const ImportanceFactors &g, std::uint64_t seed) {
  if (activations.rows() != state.dim()) {
    throw ShapeMismatch("pca activations rows");
  }
  if (roles.size() != activations.cols() || g.diag.size() != activations.cols()) {
    throw ShapeMismatch("pca roles/importance length");
  }
  const Matrix pcs = top_principal_components(state.h_unit(), 2, 200, seed);
  std::vector<PcaPoint> points;
  points.reserve(activations.cols());
  for (std::size_t c = 0; c < activations.cols(); ++c) {
    PcaPoint p;
    for (std::size_t r = 0; r < activations.rows(); ++r) {
      p.pc1 += pcs.at(r, 0) * activations.at(r, c);
      p.pc2 += pcs.at(r, 1) * activations.at(r, c);
    }
    p.modality = modality_of(roles[c]);
    p.importance = g.diag[c];
    points.push_back(p);
  }
  return points;
}

} // namespace vlmq
