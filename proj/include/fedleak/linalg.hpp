#pragma once

#include <cstddef>
#include <span>

#include "fedleak/common.hpp"

namespace fedleak {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vec data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  bool finite() const { return all_finite(data); }

  bool operator==(const Matrix& o) const = default;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double dot(const Vec& a, const Vec& b) {
  return dot(std::span<const double>(a), std::span<const double>(b));
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }
inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// out = M * x  (M: r x c, x: c)
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t r = 0; r < m.rows; ++r) out[r] = dot(m.row(r), x);
}

// out = M^T * x  (M: r x c, x: r, out: c)
inline void matvec_t(const Matrix& m, std::span<const double> x, std::span<double> out) {
  for (std::size_t c = 0; c < m.cols; ++c) out[c] = 0.0;
  for (std::size_t r = 0; r < m.rows; ++r) axpy(x[r], m.row(r), out);
}

inline Vec matvec(const Matrix& m, const Vec& x) {
  Vec out(m.rows);
  matvec(m, x, out);
  return out;
}

inline Vec matvec_t(const Matrix& m, const Vec& x) {
  Vec out(m.cols);
  matvec_t(m, x, out);
  return out;
}

inline double cosine(const Vec& a, const Vec& b) {
  double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace fedleak
