#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "probex/errors.hpp"

namespace probex {

using Vec = std::vector<double>;

namespace detail {

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace detail

// Dense row-major matrix, double precision. Values are immutable once a
// public operation returns them; operations are pure functions.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
};

// Dense row-major 3D tensor; data[(i * dim1 + j) * dim2 + k].
struct Tensor3 {
  std::size_t dim0 = 0;
  std::size_t dim1 = 0;
  std::size_t dim2 = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t d0, std::size_t d1, std::size_t d2, double fill = 0.0)
      : dim0(d0), dim1(d1), dim2(d2), data(d0 * d1 * d2, fill) {}

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * dim1 + j) * dim2 + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * dim1 + j) * dim2 + k];
  }

  std::size_t size() const { return data.size(); }
};

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows) {
    throw DimensionError("matmul: inner dimensions differ, " +
                         detail::shape_str(a.rows, a.cols) + " * " +
                         detail::shape_str(b.rows, b.cols));
  }
  Matrix out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &out.data[i * b.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

// a * b^T; cache-friendly when both are row-major.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols) {
    throw DimensionError("matmul_nt: inner dimensions differ, " +
                         detail::shape_str(a.rows, a.cols) + " * " +
                         detail::shape_str(b.cols, b.rows));
  }
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = &b.data[j * b.cols];
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  return out;
}

// a^T * b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows) {
    throw DimensionError("matmul_tn: inner dimensions differ, " +
                         detail::shape_str(a.cols, a.rows) + " * " +
                         detail::shape_str(b.rows, b.cols));
  }
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = &a.data[k * a.cols];
    const double* brow = &b.data[k * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      double* orow = &out.data[i * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Vec matvec(const Matrix& a, const Vec& x) {
  if (a.cols != x.size()) {
    throw DimensionError("matvec: matrix " + detail::shape_str(a.rows, a.cols) +
                         " with vector of length " + std::to_string(x.size()));
  }
  Vec y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double acc = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) acc += arow[j] * x[j];
    y[i] = acc;
  }
  return y;
}

// a^T * x.
inline Vec matvec_t(const Matrix& a, const Vec& x) {
  if (a.rows != x.size()) {
    throw DimensionError("matvec_t: matrix " + detail::shape_str(a.rows, a.cols) +
                         " with vector of length " + std::to_string(x.size()));
  }
  Vec y(a.cols, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double xi = x[i];
    const double* arow = &a.data[i * a.cols];
    for (std::size_t j = 0; j < a.cols; ++j) y[j] += arow[j] * xi;
  }
  return y;
}

// y_k = sum_ij W[i,j,k] * X[i,j].
inline Vec contract3(const Tensor3& w, const Matrix& x) {
  if (w.dim0 != x.rows || w.dim1 != x.cols) {
    throw DimensionError("contract3: tensor " + std::to_string(w.dim0) + "x" +
                         std::to_string(w.dim1) + "x" + std::to_string(w.dim2) +
                         " with matrix " + detail::shape_str(x.rows, x.cols));
  }
  Vec y(w.dim2, 0.0);
  const std::size_t plane = x.rows * x.cols;
  for (std::size_t ij = 0; ij < plane; ++ij) {
    const double xij = x.data[ij];
    const double* wslab = &w.data[ij * w.dim2];
    for (std::size_t k = 0; k < w.dim2; ++k) y[k] += xij * wslab[k];
  }
  return y;
}

inline Vec relu(const Vec& v) {
  Vec out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] > 0.0 ? v[i] : 0.0;
  return out;
}

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

inline double cosine_sim(const Vec& a, const Vec& b) {
  const double na = norm2(a);
  const double nb = norm2(b);
  if (na == 0.0 || nb == 0.0) {
    throw DegenerateInputError("cosine_sim: zero-norm vector");
  }
  return dot(a, b) / (na * nb);
}

// Linear-interpolated quantile between order statistics (type-7 convention).
inline double quantile(const Vec& v, double q) {
  if (v.empty()) throw DegenerateInputError("quantile: empty vector");
  if (q < 0.0 || q > 1.0) throw ConfigError("quantile: q outside [0,1]");
  Vec sorted = v;
  std::sort(sorted.begin(), sorted.end());
  const double h = q * static_cast<double>(sorted.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline double frobenius_distance(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw DimensionError("frobenius_distance: " + detail::shape_str(a.rows, a.cols) +
                         " vs " + detail::shape_str(b.rows, b.cols));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// Symmetric pairwise Frobenius distances with an exactly zero diagonal.
inline Matrix pairwise_l2(const std::vector<Matrix>& items) {
  const std::size_t n = items.size();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dij = frobenius_distance(items[i], items[j]);
      d(i, j) = dij;
      d(j, i) = dij;
    }
  }
  return d;
}

inline bool all_finite(const double* p, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

inline Vec flatten(const Matrix& m) { return m.data; }

}  // namespace probex
