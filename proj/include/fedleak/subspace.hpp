#pragma once

#include <utility>

#include "fedleak/linalg.hpp"

namespace fedleak {

// Orthonormal basis of the low-rank space spanned by a set of vectors.
// Immutable after construction; all queries are read-only.
class Subspace {
 public:
  Subspace() = default;

  static Subspace empty(std::size_t ambient_dim, double drop_tolerance = kDefaultDropTolerance) {
    Subspace s;
    s.ambient_dim_ = ambient_dim;
    s.basis_ = Matrix(0, ambient_dim);
    s.drop_tolerance_ = drop_tolerance;
    return s;
  }

  static constexpr double kDefaultDropTolerance = 1e-8;

  std::size_t ambient_dim() const { return ambient_dim_; }
  std::size_t rank() const { return basis_.rows; }
  double drop_tolerance() const { return drop_tolerance_; }
  const Matrix& basis() const { return basis_; }

  // P_S(v) = sum_i <v, b_i> b_i
  Vec project(const Vec& v) const {
    check_dim(v);
    Vec p(ambient_dim_, 0.0);
    for (std::size_t i = 0; i < basis_.rows; ++i) {
      axpy(dot(std::span<const double>(v), basis_.row(i)), basis_.row(i), p);
    }
    return p;
  }

  // ||v - P_S(v)|| / ||v||, in [0, 1] up to rounding.
  // Two projection passes keep the residual accurate for ill-conditioned input.
  double residual_ratio(const Vec& v) const {
    check_dim(v);
    double nv = norm2(v);
    require(nv > 0.0, "residual_ratio: zero vector");
    Vec r = v;
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t i = 0; i < basis_.rows; ++i) {
        axpy(-dot(std::span<const double>(r), basis_.row(i)), basis_.row(i), r);
      }
    }
    double ratio = norm2(r) / nv;
    return ratio < 1.0 ? ratio : 1.0;
  }

  bool in_span(const Vec& v, double epsilon) const {
    require(epsilon > 0.0, "in_span: epsilon must be positive");
    return residual_ratio(v) < epsilon;
  }

  // 1 means perfect membership, 0 orthogonal.
  double span_similarity(const Vec& v) const { return 1.0 - residual_ratio(v); }

  // Modified Gram-Schmidt with a re-orthogonalization pass. Vectors whose
  // residual falls below drop_tolerance * ||v|| are discarded as dependent.
  // Deterministic: input order fixes the basis.
  static Subspace orthonormalize(const std::vector<Vec>& spanning_vectors,
                                 double drop_tolerance = kDefaultDropTolerance,
                                 std::size_t ambient_dim_hint = 0) {
    require(drop_tolerance > 0.0, "orthonormalize: drop_tolerance must be positive");
    if (spanning_vectors.empty()) return Subspace::empty(ambient_dim_hint, drop_tolerance);

    std::size_t dim = spanning_vectors.front().size();
    if (ambient_dim_hint != 0) {
      require(dim == ambient_dim_hint, "orthonormalize: ambient dim mismatch");
    }
    Subspace s = Subspace::empty(dim, drop_tolerance);
    std::vector<Vec> basis;
    for (const Vec& v : spanning_vectors) {
      require(v.size() == dim, "orthonormalize: vector dimension mismatch");
      require(all_finite(v), "orthonormalize: non-finite entry");
      double nv = norm2(v);
      if (nv == 0.0) continue;
      Vec r = v;
      for (int pass = 0; pass < 2; ++pass) {
        for (const Vec& b : basis) {
          axpy(-dot(r, b), b, r);
        }
      }
      double nr = norm2(r);
      if (nr > drop_tolerance * nv) {
        for (double& x : r) x /= nr;
        basis.push_back(std::move(r));
      }
    }
    s.basis_ = Matrix(basis.size(), dim);
    for (std::size_t i = 0; i < basis.size(); ++i) {
      for (std::size_t j = 0; j < dim; ++j) s.basis_.at(i, j) = basis[i][j];
    }
    return s;
  }

 private:
  void check_dim(const Vec& v) const {
    require(v.size() == ambient_dim_, "subspace: vector dimension mismatch");
  }

  std::size_t ambient_dim_ = 0;
  Matrix basis_;
  double drop_tolerance_ = kDefaultDropTolerance;
};

}  // namespace fedleak
