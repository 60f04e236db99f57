// SPDX-License-Identifier: Apache-2.0
#include "vlmq/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "vlmq/errors.hpp"

namespace vlmq {

namespace {

void require(bool cond, const char *msg) {
  if (!cond) {
    throw Error(ErrorKind::Validation, msg);
  }
}

} // namespace

void ensure_finite(const Matrix &m, const char *what) {
  if (!all_finite(m)) {
    throw Error(ErrorKind::Numerical, std::string("non-finite entries in ") + what);
  }
}

Matrix multiply(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.rows()) {
    throw ShapeMismatch("multiply " + std::to_string(a.cols()) + " vs " +
                        std::to_string(b.rows()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a.at(i, k);
      if (aik == 0.0) {
        continue;
      }
      for (std::size_t j = 0; j < b.cols(); ++j) {
        out.at(i, j) += aik * b.at(k, j);
      }
    }
  }
  return out;
}

Matrix multiply_abt(const Matrix &a, const Matrix &b) {
  if (a.cols() != b.cols()) {
    throw ShapeMismatch("multiply_abt inner dims");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) {
        s += a.at(i, k) * b.at(j, k);
      }
      out.at(i, j) = s;
    }
  }
  return out;
}

Matrix multiply_atb(const Matrix &a, const Matrix &b) {
  if (a.rows() != b.rows()) {
    throw ShapeMismatch("multiply_atb inner dims");
  }
  Matrix out(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a.at(k, i);
      if (aki == 0.0) {
        continue;
      }
      for (std::size_t j = 0; j < b.cols(); ++j) {
        out.at(i, j) += aki * b.at(k, j);
      }
    }
  }
  return out;
}

Matrix add(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("add");
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] += b.data()[i];
  }
  return out;
}

Matrix subtract(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("subtract");
  }
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] -= b.data()[i];
  }
  return out;
}

Matrix scaled(const Matrix &a, double factor) {
  Matrix out = a;
  for (double &x : out.data()) {
    x *= factor;
  }
  return out;
}

double frobenius_norm(const Matrix &a) {
  double s = 0.0;
  for (double x : a.data()) {
    s += x * x;
  }
  return std::sqrt(s);
}

double max_abs(const Matrix &a) {
  double m = 0.0;
  for (double x : a.data()) {
    m = std::max(m, std::fabs(x));
  }
  return m;
}

double max_abs_diff(const Matrix &a, const Matrix &b) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("max_abs_diff");
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

bool is_symmetric(const Matrix &a, double tol) {
  if (a.rows() != a.cols()) {
    return false;
  }
  const double scale = std::max(1.0, max_abs(a));
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = i + 1; j < a.cols(); ++j) {
      if (std::fabs(a.at(i, j) - a.at(j, i)) > tol * scale) {
        return false;
      }
    }
  }
  return true;
}

CholeskyFactor cholesky(const Matrix &a) {
  require(a.rows() == a.cols(), "cholesky: matrix must be square");
  if (!is_symmetric(a)) {
    throw Error(ErrorKind::Validation, "cholesky: matrix not symmetric");
  }
  const std::size_t n = a.rows();
  Matrix l(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a.at(i, j);
      for (std::size_t k = 0; k < j; ++k) {
        sum -= l.at(i, k) * l.at(j, k);
      }
      if (i == j) {
        if (sum <= 0.0 || !std::isfinite(sum)) {
          throw NotPositiveDefinite("pivot " + std::to_string(sum) + " at index " +
                                    std::to_string(i));
        }
        l.at(i, i) = std::sqrt(sum);
      } else {
        l.at(i, j) = sum / l.at(j, j);
      }
    }
  }
  ensure_finite(l, "cholesky factor");
  return {n, std::move(l)};
}

void solve_lower_inplace(const Matrix &lower, std::span<double> b) {
  const std::size_t n = lower.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) {
      s -= lower.at(i, k) * b[k];
    }
    b[i] = s / lower.at(i, i);
  }
}

void solve_lower_transposed_inplace(const Matrix &lower, std::span<double> b) {
  const std::size_t n = lower.rows();
  for (std::size_t ii = n; ii-- > 0;) {
    double s = b[ii];
    for (std::size_t k = ii + 1; k < n; ++k) {
      s -= lower.at(k, ii) * b[k];
    }
    b[ii] = s / lower.at(ii, ii);
  }
}

Matrix inverse_spd(const Matrix &a) {
  const CholeskyFactor f = cholesky(a);
  const std::size_t n = f.dim;
  Matrix inv(n, n);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(col.begin(), col.end(), 0.0);
    col[j] = 1.0;
    solve_lower_inplace(f.lower, col);
    solve_lower_transposed_inplace(f.lower, col);
    inv.set_column(j, col);
  }
  // symmetrize solve drift
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double m = 0.5 * (inv.at(i, j) + inv.at(j, i));
      inv.at(i, j) = m;
      inv.at(j, i) = m;
    }
  }
  ensure_finite(inv, "spd inverse");
  return inv;
}

Matrix upper_inverse_factor(const Matrix &spd) {
  const Matrix inv = inverse_spd(spd);
  const CholeskyFactor f = cholesky(inv);
  return f.lower.transposed();
}

double rayleigh_quotient(const Matrix &a, std::span<const double> v) {
  const std::size_t n = a.rows();
  std::vector<double> av(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      s += a.at(i, j) * v[j];
    }
    av[i] = s;
  }
  const double denom = dot(v, v);
  return denom == 0.0 ? 0.0 : dot(av, v) / denom;
}

Matrix top_principal_components(const Matrix &a, std::size_t k, std::size_t iters,
                                std::uint64_t seed) {
  require(a.rows() == a.cols(), "pca: matrix must be square");
  require(k >= 1 && k <= a.rows(), "pca: k out of range");
  require(iters >= 1, "pca: iters must be >= 1");
  const std::size_t n = a.rows();

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);

  Matrix comps(n, k);
  std::vector<double> lambdas;
  std::vector<std::vector<double>> basis;

  auto apply_deflated = [&](const std::vector<double> &v, std::vector<double> &out) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        s += a.at(i, j) * v[j];
      }
      out[i] = s;
    }
    for (std::size_t c = 0; c < basis.size(); ++c) {
      const double proj = lambdas[c] * dot(basis[c], v);
      for (std::size_t i = 0; i < n; ++i) {
        out[i] -= proj * basis[c][i];
      }
    }
  };

  auto orthogonalize = [&](std::vector<double> &v) {
    for (const auto &b : basis) {
      const double proj = dot(b, v);
      for (std::size_t i = 0; i < n; ++i) {
        v[i] -= proj * b[i];
      }
    }
  };

  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> v(n), w(n);
    for (double &x : v) {
      x = uni(rng);
    }
    orthogonalize(v);
    double nv = norm2(v);
    if (nv < 1e-12) {
      // fully deflated random direction; restart from a basis vector
      std::fill(v.begin(), v.end(), 0.0);
      v[c % n] = 1.0;
      orthogonalize(v);
      nv = norm2(v);
    }
    for (double &x : v) {
      x /= nv;
    }
    for (std::size_t it = 0; it < iters; ++it) {
      apply_deflated(v, w);
      orthogonalize(w);
      const double nw = norm2(w);
      if (nw < 1e-14) {
        break; // degenerate remainder (e.g. rank-deficient A); keep v
      }
      for (std::size_t i = 0; i < n; ++i) {
        v[i] = w[i] / nw;
      }
    }
    orthogonalize(v);
    const double nfinal = norm2(v);
    if (nfinal > 1e-14) {
      for (double &x : v) {
        x /= nfinal;
      }
    }
    lambdas.push_back(rayleigh_quotient(a, v));
    basis.push_back(v);
    for (std::size_t i = 0; i < n; ++i) {
      comps.at(i, c) = v[i];
    }
  }
  ensure_finite(comps, "principal components");
  return comps;
}

} // namespace vlmq
