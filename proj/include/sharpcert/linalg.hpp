#pragma once

// Dense linear-algebra primitives used by the certification stack: SVD-based
// pseudoinverse, kernel/cokernel bases, affine projection, and restricted
// smallest singular values. All rank decisions go through one SVD per matrix
// so that every downstream consumer sees the same numerical rank.

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace sharpcert {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kTolRank = 1e-10;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline void require_finite(const Matrix& a, const char* what) {
  if (!a.allFinite()) throw std::invalid_argument(std::string(what) + ": non-finite entries");
}

// Thin+full SVD with a numerical rank cut at tol_rank relative to the largest
// singular value. V is full (n columns) so kernel bases can be read off the
// trailing columns.
struct RankRevealingDecomposition {
  Matrix left;             // m x min(m,n), thin U
  Vector singular_values;  // min(m,n), non-increasing
  Matrix right;            // n x n, full V
  Eigen::Index rank = 0;
  double tol_rank = kTolRank;

  RankRevealingDecomposition() = default;

  explicit RankRevealingDecomposition(const Matrix& a, double tol = kTolRank)
      : tol_rank(tol) {
    require_finite(a, "svd input");
    if (a.rows() == 0 || a.cols() == 0) {
      left = Matrix::Zero(a.rows(), 0);
      singular_values = Vector::Zero(0);
      right = Matrix::Identity(a.cols(), a.cols());
      rank = 0;
      return;
    }
    if (a.rows() >= 32 && a.cols() >= 32) {
      Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
      left = svd.matrixU();
      singular_values = svd.singularValues();
      right = svd.matrixV();
    } else {
      Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeFullV);
      left = svd.matrixU();
      singular_values = svd.singularValues();
      right = svd.matrixV();
    }
    const double smax = singular_values.size() ? singular_values(0) : 0.0;
    const double cut = tol_rank * smax;
    rank = 0;
    for (Eigen::Index i = 0; i < singular_values.size(); ++i)
      if (singular_values(i) > cut) ++rank;
  }

  double sigma_max() const { return singular_values.size() ? singular_values(0) : 0.0; }

  double sigma_min_positive() const {
    return rank > 0 ? singular_values(rank - 1) : 0.0;
  }

  // A^+ b restricted to the numerical rank.
  Vector pinv_apply(const Vector& b) const {
    if (rank == 0) return Vector::Zero(right.rows());
    Vector c = left.leftCols(rank).transpose() * b;
    c.array() /= singular_values.head(rank).array();
    return right.leftCols(rank) * c;
  }

  Matrix pinv() const {
    if (rank == 0) return Matrix::Zero(right.rows(), left.rows());
    return right.leftCols(rank) *
           singular_values.head(rank).cwiseInverse().asDiagonal() *
           left.leftCols(rank).transpose();
  }

  // Orthonormal columns spanning Ker A, with a deterministic sign convention:
  // the largest-magnitude entry of each column is positive.
  Matrix kernel() const {
    Matrix k = right.rightCols(right.cols() - rank);
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      Eigen::Index imax = 0;
      k.col(j).cwiseAbs().maxCoeff(&imax);
      if (k(imax, j) < 0) k.col(j) = -k.col(j);
    }
    return k;
  }
};

inline Matrix pseudoinverse(const Matrix& a, double tol_rank = kTolRank) {
  if (!(tol_rank > 0)) throw std::invalid_argument("pseudoinverse: tol_rank must be > 0");
  return RankRevealingDecomposition(a, tol_rank).pinv();
}

// Orthonormal columns spanning Ker A (empty matrix when A is injective).
inline Matrix kernel_basis(const Matrix& a, double tol_rank = kTolRank) {
  return RankRevealingDecomposition(a, tol_rank).kernel();
}

// Rows spanning Ker Phi = (Im Phi*)^perp; the orthonormal row matrix N with
// Ker N = Im Phi*. Phi has full row rank exactly when N has n - m rows.
inline Matrix cokernel_rows(const Matrix& phi, double tol_rank = kTolRank) {
  return kernel_basis(phi, tol_rank).transpose();
}

inline Eigen::Index numerical_rank(const Matrix& a, double tol_rank = kTolRank) {
  return RankRevealingDecomposition(a, tol_rank).rank;
}

// Euclidean projection of x onto {z : Phi z = Phi x_ref}.
inline Vector affine_project(const Vector& x, const Matrix& phi, const Vector& x_ref,
                             const Matrix& phi_pinv) {
  if (x.size() != phi.cols() || x_ref.size() != phi.cols() ||
      phi_pinv.rows() != phi.cols() || phi_pinv.cols() != phi.rows())
    throw std::invalid_argument("affine_project: dimension mismatch");
  return x - phi_pinv * (phi * (x - x_ref));
}

// c1 = min over unit w in span(K) of ||B w|| = sigma_min(B K). Returns +inf
// when K has no columns (vacuous minimum) and 0 when B K is wide or has no
// rows, since the map then has a kernel of its own.
inline double restricted_smallest_gain(const Matrix& b, const Matrix& k) {
  if (k.cols() == 0) return std::numeric_limits<double>::infinity();
  const Matrix bk = b * k;
  if (bk.rows() < bk.cols()) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(bk);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

}  // namespace sharpcert
