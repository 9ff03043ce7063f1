#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace wflow {

// Particle-major layout: row i of a Matrix is particle i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

// Sum that does not depend on the order of the terms: sorted, then added.
// Used for every reduction over particles so relabeling particles leaves
// results bit-identical.
inline double order_free_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double x : terms) s += x;
  return s;
}

template <class Derived>
double order_free_sum(const Eigen::DenseBase<Derived>& v) {
  std::vector<double> terms(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) terms[static_cast<std::size_t>(i)] = v.derived().coeff(i);
  return order_free_sum(std::move(terms));
}

/// Row order fixed by row contents alone (lexicographic on a, then b).
/// Computing in this frame makes every reduction over particles independent
/// of how the particles are labeled; equal rows are interchangeable anyway.
inline std::vector<Index> canonical_order(const Eigen::Ref<const Matrix>& a, const Matrix* b = nullptr) {
  std::vector<Index> p(static_cast<std::size_t>(a.rows()));
  for (Index i = 0; i < a.rows(); ++i) p[static_cast<std::size_t>(i)] = i;
  auto less = [&](Index i, Index j) {
    for (Index k = 0; k < a.cols(); ++k)
      if (a(i, k) != a(j, k)) return a(i, k) < a(j, k);
    if (b)
      for (Index k = 0; k < b->cols(); ++k)
        if ((*b)(i, k) != (*b)(j, k)) return (*b)(i, k) < (*b)(j, k);
    return false;
  };
  std::stable_sort(p.begin(), p.end(), less);
  return p;
}

inline Matrix gather_rows(const Eigen::Ref<const Matrix>& a, const std::vector<Index>& p) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t k = 0; k < p.size(); ++k) out.row(static_cast<Index>(k)) = a.row(p[k]);
  return out;
}

inline void scatter_rows(const Matrix& src, const std::vector<Index>& p, Eigen::Ref<Matrix> dst) {
  for (std::size_t k = 0; k < p.size(); ++k) dst.row(p[k]) = src.row(static_cast<Index>(k));
}

// First non-finite row of a matrix, or -1.
template <class Derived>
Index first_non_finite_row(const Eigen::DenseBase<Derived>& m) {
  for (Index i = 0; i < m.rows(); ++i)
    if (!m.row(i).allFinite()) return i;
  return -1;
}

}  // namespace wflow
