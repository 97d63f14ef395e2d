#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SVD>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "bcadmm/barrier.hpp"

namespace bcadmm {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Triplet = Eigen::Triplet<double>;
using SpMat = Eigen::SparseMatrix<double>;

struct NotPositiveDefinite : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateMatrix : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SingularDeformation : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// General sparse m x n matrix. Assembled once from triplets; entries must be
/// finite.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(int rows, int cols, const std::vector<Triplet>& entries)
      : m_(rows, cols) {
    for (const auto& t : entries) {
      if (!std::isfinite(t.value()))
        throw std::invalid_argument("SparseMatrix: non-finite entry");
      if (t.row() < 0 || t.row() >= rows || t.col() < 0 || t.col() >= cols)
        throw std::invalid_argument("SparseMatrix: entry out of range");
    }
    m_.setFromTriplets(entries.begin(), entries.end());
    m_.makeCompressed();
  }

  int rows() const { return static_cast<int>(m_.rows()); }
  int cols() const { return static_cast<int>(m_.cols()); }
  const SpMat& eigen() const { return m_; }

  Vec apply(const Vec& x) const { return m_ * x; }
  Vec applyT(const Vec& y) const { return m_.transpose() * y; }

 private:
  SpMat m_;
};

/// Symmetric n x n sparse matrix. Assembly takes one triangle (or both, with
/// duplicates summed after symmetrization guard): entries (i,j) with i != j
/// are mirrored so get(i,j) == get(j,i) always holds.
class SparseSymMatrix {
 public:
  SparseSymMatrix() = default;
  explicit SparseSymMatrix(int n) : m_(n, n) {}

  // `lower` holds entries with row >= col; the strict part is mirrored.
  static SparseSymMatrix from_lower_triplets(int n,
                                             const std::vector<Triplet>& lower) {
    std::vector<Triplet> full;
    full.reserve(2 * lower.size());
    for (const auto& t : lower) {
      if (!std::isfinite(t.value()))
        throw std::invalid_argument("SparseSymMatrix: non-finite entry");
      if (t.row() < t.col())
        throw std::invalid_argument("SparseSymMatrix: entry above diagonal");
      full.push_back(t);
      if (t.row() != t.col()) full.emplace_back(t.col(), t.row(), t.value());
    }
    SparseSymMatrix s;
    s.m_.resize(n, n);
    s.m_.setFromTriplets(full.begin(), full.end());
    s.m_.makeCompressed();
    return s;
  }

  int n() const { return static_cast<int>(m_.rows()); }
  const SpMat& eigen() const { return m_; }
  SpMat& eigen() { return m_; }
  Vec apply(const Vec& x) const { return m_ * x; }

 private:
  SpMat m_;
};

/// Opaque sparse Cholesky factorization (fill-reducing AMD ordering).
/// Reusable for repeated solves until the factored matrix changes.
class CholeskyFactor {
 public:
  explicit CholeskyFactor(const SparseSymMatrix& M) {
    llt_.compute(M.eigen());
    if (llt_.info() != Eigen::Success)
      throw NotPositiveDefinite("cholesky_factorize: non-positive pivot");
  }

  Vec solve(const Vec& b) const { return llt_.solve(b); }

 private:
  Eigen::SimplicialLLT<SpMat> llt_;
};

inline CholeskyFactor cholesky_factorize(const SparseSymMatrix& M) {
  return CholeskyFactor(M);
}

/// Largest eigenvalue of A^T A (squared operator norm of A) by power
/// iteration with a deterministic all-ones start vector.
inline double operator_norm_sq(const SparseMatrix& A, double tol = 1e-6,
                               int max_iters = 500) {
  const int n = A.cols();
  if (n == 0 || A.rows() == 0) throw DegenerateMatrix("operator_norm_sq: empty A");
  Vec v = Vec::Ones(n) / std::sqrt(static_cast<double>(n));
  double lambda = 0.0;
  for (int it = 0; it < max_iters; ++it) {
    Vec w = A.applyT(A.apply(v));
    const double norm = w.norm();
    if (norm == 0.0) throw DegenerateMatrix("operator_norm_sq: A^T A v vanished");
    lambda = v.dot(w);
    // Symmetric eigenvalue residual bounds |lambda - lambda_max| directly.
    if ((w - lambda * v).norm() <= tol * lambda) return lambda;
    v = w / norm;
  }
  return lambda;
}

/// Rotational factor of the polar decomposition: the R in SO(d) minimizing
/// ||F - R||_F, d in {2,3}. SVD with a reflection fix (negate the last
/// singular direction when det(U V^T) < 0) so det R = +1 always.
inline Mat polar_rotation(const Mat& F) {
  const int d = static_cast<int>(F.rows());
  if (d != static_cast<int>(F.cols()) || (d != 2 && d != 3))
    throw std::invalid_argument("polar_rotation: F must be 2x2 or 3x3");
  Eigen::JacobiSVD<Mat> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (!(svd.singularValues()(d - 1) > 0.0))
    throw SingularDeformation("polar_rotation: singular deformation gradient");
  Mat R = svd.matrixU() * svd.matrixV().transpose();
  if (R.determinant() < 0.0) {
    Mat U = svd.matrixU();
    U.col(d - 1) *= -1.0;
    R = U * svd.matrixV().transpose();
  }
  return R;
}

}  // namespace bcadmm
