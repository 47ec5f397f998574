// Copyright 2026 The qsim Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense kernels for the reference engine. Everything is plain row-major
// double arithmetic with a fixed summation order, so results are
// reproducible run to run.

#ifndef QSIM_OPS_HPP_
#define QSIM_OPS_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "qsim/error.hpp"
#include "qsim/tensor.hpp"

namespace qsim::ops {

namespace detail {

// C[r, :] += sum_q A(r, q) * B[q, :] for r < rows, q < inner, where A is read
// through strides (A(r, q) = a[r * rs + q * qs]) and B, C are row-major with
// n columns. Four output rows share each pass over a row of B.
inline void gemm_accumulate(const double* a, std::size_t rs, std::size_t qs, const double* b,
                            double* c, std::size_t rows, std::size_t inner, std::size_t n) {
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    double* c0 = c + r * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (std::size_t q = 0; q < inner; ++q) {
      const double a0 = a[r * rs + q * qs], a1 = a[(r + 1) * rs + q * qs];
      const double a2 = a[(r + 2) * rs + q * qs], a3 = a[(r + 3) * rs + q * qs];
      const double* br = b + q * n;
      for (std::size_t j = 0; j < n; ++j) {
        const double bv = br[j];
        c0[j] += a0 * bv;
        c1[j] += a1 * bv;
        c2[j] += a2 * bv;
        c3[j] += a3 * bv;
      }
    }
  }
  for (; r < rows; ++r) {
    double* cr = c + r * n;
    for (std::size_t q = 0; q < inner; ++q) {
      const double av = a[r * rs + q * qs];
      const double* br = b + q * n;
      for (std::size_t j = 0; j < n; ++j) cr[j] += av * br[j];
    }
  }
}

}  // namespace detail

/// y[m x n] = x[m x k] * w[n x k]^T
inline Tensor matmul_nt(const Tensor& x, const Tensor& w) {
  const std::size_t m = x.rows(), k = x.cols(), n = w.dim(0);
  if (w.rank() != 2 || w.dim(1) != k) {
    throw ShapeError("matmul: input " + shape_string(x.shape()) + " vs weight " +
                     shape_string(w.shape()));
  }
  std::vector<double> wt(k * n);
  const double* wp = w.values().data();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t p = 0; p < k; ++p) wt[p * n + j] = wp[j * k + p];
  Tensor y({m, n});
  detail::gemm_accumulate(x.values().data(), k, 1, wt.data(), y.values().data(), m, k, n);
  return y;
}

/// c[m x n] = a[m x k] * b[k x n]
inline Tensor matmul_nn(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Tensor c({m, n});
  detail::gemm_accumulate(a.values().data(), k, 1, b.values().data(), c.values().data(), m, k, n);
  return c;
}

/// c[k x n] = a[m x k]^T * b[m x n]
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != m) {
    throw ShapeError("matmul: " + shape_string(a.shape()) + "^T x " + shape_string(b.shape()));
  }
  Tensor c({k, n});
  detail::gemm_accumulate(a.values().data(), 1, k, b.values().data(), c.values().data(), k, m, n);
  return c;
}

inline void add_row_bias(Tensor& y, const Tensor& bias) {
  const std::size_t n = y.cols();
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += bias[i % n];
}

inline Tensor column_sums(const Tensor& g) {
  const std::size_t n = g.cols();
  Tensor s({n});
  for (std::size_t i = 0; i < g.numel(); ++i) s[i % n] += g[i];
  return s;
}

inline void accumulate(Tensor& dst, const Tensor& src) {
  require_same_shape(dst, src, "accumulate");
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// ---------------------------------------------------------------------------
// Row softmax

inline void softmax_rows_inplace(std::span<double> data, std::size_t cols) {
  for (std::size_t r = 0; r * cols < data.size(); ++r) {
    double* row = data.data() + r * cols;
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < cols; ++j) m = std::max(m, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - m);
      sum += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= sum;
  }
}

/// dx = p * (dy - sum(dy * p)) per row.
inline void softmax_rows_backward(std::span<const double> p, std::span<const double> dy,
                                  std::span<double> dx, std::size_t cols) {
  for (std::size_t r = 0; r * cols < p.size(); ++r) {
    const std::size_t o = r * cols;
    double dot = 0.0;
    for (std::size_t j = 0; j < cols; ++j) dot += dy[o + j] * p[o + j];
    for (std::size_t j = 0; j < cols; ++j) dx[o + j] = p[o + j] * (dy[o + j] - dot);
  }
}

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

inline double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis. `xhat` and `inv_std` are saved for
// the backward pass.

inline Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        Tensor* xhat, std::vector<double>* inv_std) {
  const std::size_t d = x.cols(), rows = x.rows();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layernorm: input width " + std::to_string(d) + " vs parameters " +
                     std::to_string(gamma.numel()));
  }
  Tensor y(x.shape());
  if (xhat) *xhat = Tensor(x.shape());
  if (inv_std) inv_std->assign(rows, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.values().data() + r * d;
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    if (inv_std) (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mean) * is;
      if (xhat) (*xhat)[r * d + j] = h;
      y[r * d + j] = h * gamma[j] + beta[j];
    }
  }
  return y;
}

inline Tensor layernorm_backward(const Tensor& dy, const Tensor& xhat,
                                 const std::vector<double>& inv_std, const Tensor& gamma,
                                 Tensor& dgamma, Tensor& dbeta) {
  const std::size_t d = dy.cols(), rows = dy.rows();
  Tensor dx(dy.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    double sum_g = 0.0, sum_gh = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double g = dy[r * d + j];
      const double h = xhat[r * d + j];
      dgamma[j] += g * h;
      dbeta[j] += g;
      const double gh = g * gamma[j];
      sum_g += gh;
      sum_gh += gh * h;
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double gh = dy[r * d + j] * gamma[j];
      dx[r * d + j] = inv_std[r] * (gh - inv_d * sum_g - xhat[r * d + j] * inv_d * sum_gh);
    }
  }
  return dx;
}

}  // namespace qsim::ops

#endif  // QSIM_OPS_HPP_
