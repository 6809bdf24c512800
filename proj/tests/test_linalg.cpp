#include <gtest/gtest.h>

#include <cmath>

#include "sharpcert/linalg.hpp"
#include "sharpcert/rng.hpp"

namespace sharpcert {
namespace {

Matrix ex12_phi() {
  Matrix phi(2, 3);
  phi << 1, 1, 0, 1, 0, -1;
  return phi;
}

TEST(Pseudoinverse, IdentityIsItsOwn) {
  const Matrix i3 = Matrix::Identity(3, 3);
  EXPECT_LT((pseudoinverse(i3) - i3).norm(), 1e-14);
}

TEST(Pseudoinverse, DiagonalReciprocalOnNonzeroEntries) {
  Matrix a(2, 2);
  a << 2, 0, 0, 0;
  Matrix expected(2, 2);
  expected << 0.5, 0, 0, 0;
  EXPECT_LT((pseudoinverse(a) - expected).norm(), 1e-14);
}

TEST(Pseudoinverse, WideMatrixHandValue) {
  const Matrix phi = ex12_phi();
  Matrix expected(3, 2);
  expected << 1, 1, 2, -1, 1, -2;
  expected /= 3.0;
  const Matrix pinv = pseudoinverse(phi);
  EXPECT_LT((pinv - expected).norm(), 1e-12);
  EXPECT_LT((phi * pinv * phi - phi).norm(), 1e-12);
}

TEST(Pseudoinverse, MoorePenroseIdentitiesOnRandomMatrices) {
  CounterRng rng(101);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = rng.normal_matrix(20, 30);
    const Matrix ap = pseudoinverse(a);
    const double scale = 1e-10 * RankRevealingDecomposition(a).sigma_max() * 30;
    EXPECT_LT((a * ap * a - a).norm(), scale);
    EXPECT_LT((ap * a * ap - ap).norm(), scale);
    EXPECT_LT(((a * ap).transpose() - a * ap).norm(), scale);
    EXPECT_LT(((ap * a).transpose() - ap * a).norm(), scale);
  }
}

TEST(Pseudoinverse, RankDeficientMoorePenrose) {
  CounterRng rng(202);
  const Matrix u = rng.normal_matrix(12, 3);
  const Matrix v = rng.normal_matrix(3, 9);
  const Matrix a = u * v;  // rank 3 by construction
  EXPECT_EQ(numerical_rank(a), 3);
  const Matrix ap = pseudoinverse(a);
  EXPECT_LT((a * ap * a - a).norm(), 1e-9);
  EXPECT_LT((ap * a * ap - ap).norm(), 1e-9);
}

TEST(Pseudoinverse, NonFiniteInputRejected) {
  Matrix a = Matrix::Zero(2, 2);
  a(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(pseudoinverse(a), std::invalid_argument);
  EXPECT_THROW(pseudoinverse(Matrix::Identity(2, 2), 0.0), std::invalid_argument);
}

TEST(KernelBasis, InjectiveMapHasEmptyBasis) {
  EXPECT_EQ(kernel_basis(Matrix::Identity(3, 3)).cols(), 0);
}

TEST(KernelBasis, ZeroMapKernelIsEverything) {
  const Matrix k = kernel_basis(Matrix::Zero(2, 3));
  ASSERT_EQ(k.cols(), 3);
  EXPECT_LT((k.transpose() * k - Matrix::Identity(3, 3)).norm(), 1e-12);
}

TEST(KernelBasis, HandSolvedHomogeneousSystem) {
  const Matrix k = kernel_basis(ex12_phi());
  ASSERT_EQ(k.cols(), 1);
  Vector expected(3);
  expected << 1, -1, 1;
  expected /= std::sqrt(3.0);
  EXPECT_LT(std::min((k.col(0) - expected).norm(), (k.col(0) + expected).norm()), 1e-12);
}

TEST(KernelBasis, OrthonormalAndAnnihilated) {
  CounterRng rng(303);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix a = rng.normal_matrix(8, 20);
    const Matrix k = kernel_basis(a);
    ASSERT_EQ(k.cols(), 20 - numerical_rank(a));
    EXPECT_LT((k.transpose() * k - Matrix::Identity(k.cols(), k.cols())).norm(), 1e-12);
    EXPECT_LT((a * k).norm(), 1e-10 * RankRevealingDecomposition(a).sigma_max());
  }
}

TEST(KernelBasis, SignConventionIsDeterministic) {
  CounterRng rng(404);
  const Matrix a = rng.normal_matrix(4, 7);
  const Matrix k = kernel_basis(a);
  for (Eigen::Index j = 0; j < k.cols(); ++j) {
    Eigen::Index imax = 0;
    k.col(j).cwiseAbs().maxCoeff(&imax);
    EXPECT_GT(k(imax, j), 0.0);
  }
}

TEST(CokernelRows, FullColumnSpanHasNoRows) {
  EXPECT_EQ(cokernel_rows(Matrix::Identity(3, 3)).rows(), 0);
}

TEST(CokernelRows, SingleRowMapSpansRemainingCoordinates) {
  Matrix phi(1, 3);
  phi << 1, 0, 0;
  const Matrix n = cokernel_rows(phi);
  ASSERT_EQ(n.rows(), 2);
  EXPECT_LT((n * n.transpose() - Matrix::Identity(2, 2)).norm(), 1e-12);
  // rows live in the plane of coordinates 2 and 3
  EXPECT_LT(n.col(0).norm(), 1e-12);
}

TEST(CokernelRows, HandValueAndAnnihilation) {
  const Matrix phi = ex12_phi();
  const Matrix n = cokernel_rows(phi);
  ASSERT_EQ(n.rows(), 1);
  Vector expected(3);
  expected << 1, -1, 1;
  expected /= std::sqrt(3.0);
  EXPECT_LT(std::min((n.row(0).transpose() - expected).norm(),
                     (n.row(0).transpose() + expected).norm()),
            1e-12);
  EXPECT_LT((n * phi.transpose()).norm(), 1e-12);
}

TEST(AffineProject, FeasiblePointIsFixed) {
  const Matrix phi = ex12_phi();
  const Matrix pinv = pseudoinverse(phi);
  Vector x_ref(3);
  x_ref << 0, 1, 0;
  EXPECT_LT((affine_project(x_ref, phi, x_ref, pinv) - x_ref).norm(), 1e-14);
}

TEST(AffineProject, HandComputedProjection) {
  const Matrix phi = ex12_phi();
  const Matrix pinv = pseudoinverse(phi);
  Vector x_ref(3), x(3), expected(3);
  x_ref << 0, 1, 0;
  x << 1, 0, 0;
  expected << 2.0 / 3.0, 1.0 / 3.0, 2.0 / 3.0;
  const Vector p = affine_project(x, phi, x_ref, pinv);
  EXPECT_LT((p - expected).norm(), 1e-12);
  EXPECT_LT((phi * p - phi * x_ref).norm(), 1e-12);
}

TEST(AffineProject, Idempotent) {
  CounterRng rng(505);
  const Matrix phi = rng.normal_matrix(4, 9);
  const Matrix pinv = pseudoinverse(phi);
  const Vector x_ref = rng.normal_vector(9);
  const Vector x = rng.normal_vector(9);
  const Vector p1 = affine_project(x, phi, x_ref, pinv);
  const Vector p2 = affine_project(p1, phi, x_ref, pinv);
  EXPECT_LT((p2 - p1).norm(), 1e-12);
}

TEST(AffineProject, DimensionMismatchRejected) {
  const Matrix phi = ex12_phi();
  const Matrix pinv = pseudoinverse(phi);
  EXPECT_THROW(affine_project(Vector::Zero(2), phi, Vector::Zero(3), pinv),
               std::invalid_argument);
}

TEST(RestrictedGain, IdentityOnIdentityBasis) {
  EXPECT_NEAR(restricted_smallest_gain(Matrix::Identity(3, 3), Matrix::Identity(3, 3)), 1.0,
              1e-14);
}

TEST(RestrictedGain, EmptyBasisGivesInfinity) {
  EXPECT_TRUE(std::isinf(restricted_smallest_gain(Matrix::Identity(3, 3), Matrix(3, 0))));
}

TEST(RestrictedGain, CoordinateProjectorAgainstKernelDirection) {
  Matrix b = Matrix::Zero(1, 3);
  b(0, 2) = 1.0;
  Matrix k(3, 1);
  k << 1, -1, 1;
  k /= std::sqrt(3.0);
  EXPECT_NEAR(restricted_smallest_gain(b, k), 1.0 / std::sqrt(3.0), 1e-12);
}

TEST(RestrictedGain, SquaredMatchesSmallestGramEigenvalue) {
  CounterRng rng(606);
  for (int trial = 0; trial < 5; ++trial) {
    const Matrix b = rng.normal_matrix(6, 8);
    Matrix raw = rng.normal_matrix(8, 3);
    const Eigen::HouseholderQR<Matrix> qr(raw);
    const Matrix k = Matrix(qr.householderQ()).leftCols(3);
    const Matrix bk = b * k;
    Eigen::SelfAdjointEigenSolver<Matrix> es(bk.transpose() * bk);
    const double gain = restricted_smallest_gain(b, k);
    EXPECT_NEAR(gain * gain, es.eigenvalues().minCoeff(), 1e-10);
  }
}

TEST(Decomposition, SingularValuesSortedAndReconstruct) {
  CounterRng rng(707);
  const Matrix a = rng.normal_matrix(10, 6);
  const RankRevealingDecomposition svd(a);
  for (Eigen::Index i = 1; i < svd.singular_values.size(); ++i)
    EXPECT_GE(svd.singular_values(i - 1), svd.singular_values(i));
  const Matrix rebuilt =
      svd.left * svd.singular_values.asDiagonal() * svd.right.leftCols(6).transpose();
  EXPECT_LT((rebuilt - a).norm(), 1e-10 * svd.sigma_max() * 10);
  EXPECT_GT(svd.sigma_min_positive(), 0.0);
  EXPECT_EQ(svd.rank, 6);
}

TEST(Decomposition, PinvApplyMatchesMaterializedPinv) {
  CounterRng rng(808);
  const Matrix a = rng.normal_matrix(7, 5);
  const Vector b = rng.normal_vector(7);
  const RankRevealingDecomposition svd(a);
  EXPECT_LT((svd.pinv_apply(b) - svd.pinv() * b).norm(), 1e-12);
}

}  // namespace
}  // namespace sharpcert
