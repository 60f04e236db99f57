// SPDX-License-Identifier: Apache-2.0
#include "vlmq/oracle.hpp"

#include <algorithm>
#include <cmath>

#include "vlmq/errors.hpp"
#include "vlmq/linalg.hpp"
#include "vlmq/quant.hpp"

namespace vlmq::oracle {

std::vector<double> gaussian_solve(Matrix a, std::vector<double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.size() != n) {
    throw ShapeMismatch("gaussian_solve system");
  }
  const double tol = 1e-12 * std::max(1.0, max_abs(a));
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::fabs(a.at(r, col)) > std::fabs(a.at(pivot, col))) {
        pivot = r;
      }
    }
    if (std::fabs(a.at(pivot, col)) < tol) {
      throw SingularSystem("pivot below tolerance at column " + std::to_string(col));
    }
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) {
        std::swap(a.at(pivot, c), a.at(col, c));
      }
      std::swap(b[pivot], b[col]);
    }
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a.at(r, col) / a.at(col, col);
      if (f == 0.0) {
        continue;
      }
      for (std::size_t c = col; c < n; ++c) {
        a.at(r, c) -= f * a.at(col, c);
      }
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t ri = n; ri-- > 0;) {
    double s = b[ri];
    for (std::size_t c = ri + 1; c < n; ++c) {
      s -= a.at(ri, c) * x[c];
    }
    x[ri] = s / a.at(ri, ri);
  }
  return x;
}

namespace {

std::vector<double> residual_row(std::span<const double> w, const Matrix &x_hat,
                                 const Matrix &x_fp) {
  const std::size_t n = x_hat.cols();
  std::vector<double> r(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      acc += w[i] * (x_fp.at(i, t) - x_hat.at(i, t));
    }
    r[t] = acc;
  }
  return r;
}

} // namespace

std::vector<double> kkt_oracle(std::span<const double> w, const Matrix &x_hat, const Matrix &x_fp,
                               std::span<const double> g, std::size_t q, double w_hat_q) {
  const std::size_t ci = x_hat.rows();
  const std::size_t n = x_hat.cols();
  if (w.size() != ci || !x_fp.same_shape(x_hat) || g.size() != n || q >= ci) {
    throw ShapeMismatch("kkt_oracle inputs");
  }

  const std::vector<double> r = residual_row(w, x_hat, x_fp);

  // normal equations of the weighted problem
  Matrix m(ci, ci);
  std::vector<double> b(ci, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < ci; ++i) {
      const double gx = g[t] * x_hat.at(i, t);
      for (std::size_t j = 0; j < ci; ++j) {
        m.at(i, j) += gx * x_hat.at(j, t);
      }
      b[i] += gx * r[t];
    }
  }

  const double d = w_hat_q - w[q];
  std::vector<double> delta(ci, 0.0);
  delta[q] = d;
  if (ci == 1) {
    return delta;
  }

  Matrix a(ci - 1, ci - 1);
  std::vector<double> rhs(ci - 1, 0.0);
  std::vector<std::size_t> map;
  map.reserve(ci - 1);
  for (std::size_t i = 0; i < ci; ++i) {
    if (i != q) {
      map.push_back(i);
    }
  }
  for (std::size_t i = 0; i + 1 < ci; ++i) {
    rhs[i] = b[map[i]] - d * m.at(map[i], q);
    for (std::size_t j = 0; j + 1 < ci; ++j) {
      a.at(i, j) = m.at(map[i], map[j]);
    }
  }
  const std::vector<double> sol = gaussian_solve(std::move(a), std::move(rhs));
  for (std::size_t i = 0; i + 1 < ci; ++i) {
    delta[map[i]] = sol[i];
  }
  return delta;
}

double weighted_objective(std::span<const double> w, std::span<const double> dw,
                          const Matrix &x_hat, const Matrix &x_fp, std::span<const double> g) {
  const std::vector<double> r = residual_row(w, x_hat, x_fp);
  double val = 0.0;
  for (std::size_t t = 0; t < x_hat.cols(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < dw.size(); ++i) {
      acc += dw[i] * x_hat.at(i, t);
    }
    const double e = acc - r[t];
    val += g[t] * e * e;
  }
  return val;
}

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

Matrix submatrix(const Matrix &m, std::size_t begin) {
  const std::size_t k = m.rows() - begin;
  Matrix out(k, k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      out.at(i, j) = m.at(begin + i, begin + j);
    }
  }
  return out;
}

} // namespace

QuantizedLayerResult reference_quantize_layer(const Matrix &w, const HessianState &state,
                                              const SolveConfig &cfg) {
  cfg.validate();
  const bool use_residual = cfg.method == Method::GPTAQ ||
                            (cfg.method == Method::VLMQ && cfg.precursor == Precursor::GPTAQ);
  const std::size_t ci = w.cols();
  const std::size_t co = w.rows();
  if (state.dim() != ci) {
    throw ShapeMismatch("reference solver dims");
  }

  const Matrix &h = state.h();
  const Matrix hd = dampen(h, cfg.damp);
  const std::vector<std::uint32_t> perm = detail::activation_order(h, cfg.act_order);
  const Matrix hdp = permute_square(hd, perm);

  Matrix residual_proj;
  if (use_residual) {
    residual_proj = multiply(w, subtract(state.cross().transposed(), h));
  }

  const std::size_t group_eff =
    cfg.group_size < 0 ? ci : std::min<std::size_t>(static_cast<std::size_t>(cfg.group_size), ci);

  // suffix inverses recomputed from scratch at every step
  std::vector<Matrix> suffix_inv(ci);
  for (std::size_t q = 0; q < ci; ++q) {
    suffix_inv[q] = inverse_spd(submatrix(hdp, q));
  }

  QuantizedLayerResult res;
  res.w_hat = Matrix(co, ci);
  res.codes.assign(co, std::vector<std::uint8_t>(ci, 0));
  res.params.resize(co);
  res.perm = perm;
  res.group_size = static_cast<int>(group_eff);
  res.row_sq_error_weighted.assign(co, 0.0);
  res.row_sq_error_unweighted.assign(co, 0.0);

  for (std::size_t r = 0; r < co; ++r) {
    std::vector<double> wp(ci);
    for (std::size_t j = 0; j < ci; ++j) {
      wp[j] = w.at(r, perm[j]);
    }
    RowQuantizer rq(ci, cfg.bits, static_cast<int>(group_eff));
    if (group_eff == ci) {
      rq.begin_column(0, wp); // static per-channel params, as in the fast path
    }
    if (use_residual && ci > 1) {
      const Matrix &inv1 = suffix_inv[1];
      for (std::size_t j = 1; j < ci; ++j) {
        double t = 0.0;
        for (std::size_t i = 1; i < ci; ++i) {
          t += residual_proj.at(r, perm[i]) * inv1.at(i - 1, j - 1);
        }
        wp[j] += t;
      }
    }

    for (std::size_t q = 0; q < ci; ++q) {
      rq.begin_column(q, wp);
      const auto [code, deq] = rq.quantize(q, wp[q]);
      const Matrix &inv = suffix_inv[q];
      const double e = (wp[q] - deq) / inv.at(0, 0);
      wp[q] = deq;
      res.codes[r][perm[q]] = code;
      for (std::size_t j = q + 1; j < ci; ++j) {
        wp[j] -= e * inv.at(0, j - q);
      }
    }

    for (std::size_t j = 0; j < ci; ++j) {
      res.w_hat.at(r, perm[j]) = wp[j];
    }
    res.params[r] = rq.group_params();
  }
  return res;
}

QuantizedLayerResult rtn_quantize_layer(const Matrix &w, const SolveConfig &cfg) {
  cfg.validate();
  const std::size_t ci = w.cols();
  const std::size_t co = w.rows();
  const std::size_t group_eff =
    cfg.group_size < 0 ? ci : std::min<std::size_t>(static_cast<std::size_t>(cfg.group_size), ci);

  QuantizedLayerResult res;
  res.w_hat = Matrix(co, ci);
  res.codes.assign(co, std::vector<std::uint8_t>(ci, 0));
  res.params.resize(co);
  res.perm.resize(ci);
  for (std::size_t j = 0; j < ci; ++j) {
    res.perm[j] = static_cast<std::uint32_t>(j);
  }
  res.group_size = static_cast<int>(group_eff);
  res.row_sq_error_weighted.assign(co, 0.0);
  res.row_sq_error_unweighted.assign(co, 0.0);

  for (std::size_t r = 0; r < co; ++r) {
    RowQuantizer rq(ci, cfg.bits, static_cast<int>(group_eff));
    std::vector<double> row(w.row(r).begin(), w.row(r).end());
    for (std::size_t c = 0; c < ci; ++c) {
      rq.begin_column(c, row);
      const auto [code, deq] = rq.quantize(c, row[c]);
      res.codes[r][c] = code;
      res.w_hat.at(r, c) = deq;
    }
    res.params[r] = rq.group_params();
  }
  return res;
}

} // namespace vlmq::oracle
