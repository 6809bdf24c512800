#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "sharpcert/certificates.hpp"
#include "sharpcert/cone_solver.hpp"
#include "sharpcert/io.hpp"
#include "sharpcert/linalg.hpp"

namespace sharpcert {
namespace {

ConeProgram make_program(Matrix a, Vector b, GroupStructure gs) {
  ConeProgram prog;
  prog.a = std::move(a);
  prog.b = std::move(b);
  prog.groups = std::move(gs);
  prog.free_coords.resize(static_cast<std::size_t>(prog.a.cols()));
  for (std::size_t i = 0; i < prog.free_coords.size(); ++i) prog.free_coords[i] = static_cast<int>(i);
  return prog;
}

// Exhaustive reference: walk the feasible affine set z = z_ls + N t on a grid
// in the kernel coordinates and take the best max-of-block-norms value.
double grid_search_value(const ConeProgram& prog, double resolution) {
  const Vector z_ls = pseudoinverse(prog.a) * prog.b;
  const Matrix nullspace = kernel_basis(prog.a);
  const auto objective = [&](const Vector& z) {
    double v = 0.0;
    for (const auto& g : prog.groups.groups) v = std::max(v, block_norm(z, g));
    return v;
  };
  if (nullspace.cols() == 0) return objective(z_ls);
  const double v_ls = objective(z_ls);
  const double radius =
      std::sqrt(static_cast<double>(prog.groups.count())) * v_ls + z_ls.norm() + 0.1;
  const int steps = static_cast<int>(std::ceil(radius / resolution));
  double best = v_ls;
  Vector t(nullspace.cols());
  if (nullspace.cols() == 1) {
    for (int i = -steps; i <= steps; ++i) {
      t(0) = i * resolution;
      best = std::min(best, objective(z_ls + nullspace * t));
    }
  } else {
    for (int i = -steps; i <= steps; ++i) {
      t(0) = i * resolution;
      const Vector base = z_ls + nullspace.col(0) * t(0);
      for (int j = -steps; j <= steps; ++j) {
        best = std::min(best, objective(base + nullspace.col(1) * (j * resolution)));
      }
    }
  }
  return best;
}

TEST(ConeSolver, SingleForcedCoordinate) {
  Matrix a(1, 3);
  a << 0, 0, 1.0 / std::sqrt(3.0);
  Vector b(1);
  b << 1.0 / std::sqrt(3.0);
  const ConeSolution sol = solve_minmax_group_norm(make_program(a, b, GroupStructure(3, {{0, 1}, {2}})));
  ASSERT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_NEAR(sol.value, 1.0, 1e-8);
  Vector expected(3);
  expected << 0, 0, 1;
  EXPECT_LT((sol.z - expected).norm(), 1e-6);
}

TEST(ConeSolver, UniqueFeasiblePoint) {
  Vector b(2);
  b << 3, 4;
  const ConeSolution sol =
      solve_minmax_group_norm(make_program(Matrix::Identity(2, 2), b, GroupStructure(2, {{0, 1}})));
  ASSERT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_NEAR(sol.value, 5.0, 1e-8);
}

TEST(ConeSolver, SymmetricBalancedOptimum) {
  Matrix a(1, 2);
  a << 1, 1;
  Vector b(1);
  b << 2;
  const ConeSolution sol = solve_minmax_group_norm(make_program(a, b, GroupStructure::singletons(2)));
  ASSERT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_NEAR(sol.value, 1.0, 1e-8);
  Vector expected(2);
  expected << 1, 1;
  EXPECT_LT((sol.z - expected).norm(), 1e-6);
}

TEST(ConeSolver, ValueEqualsMaxBlockNormOfMinimizer) {
  Matrix a(2, 4);
  a << 1, 0.3, 0.2, 0,
       0, 1, 0.5, 0.1;
  Vector b(2);
  b << 1, 0.5;
  const GroupStructure gs(4, {{0, 1}, {2, 3}});
  const ConeSolution sol = solve_minmax_group_norm(make_program(a, b, gs));
  ASSERT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_NEAR(sol.value, dual_group_norm(sol.z, gs), 1e-12);
  EXPECT_LE(sol.primal_residual, 1e-9);
  EXPECT_LE(sol.gap, 1e-8 * std::max(1.0, sol.value));
}

TEST(ConeSolver, GridSearchBracketsTheValue) {
  struct Case {
    Matrix a;
    Vector b;
    GroupStructure gs;
  };
  std::vector<Case> cases;
  {
    Matrix a(1, 2);
    a << 1, 1;
    Vector b(1);
    b << 2;
    cases.push_back({a, b, GroupStructure::singletons(2)});
  }
  {
    Matrix a(2, 3);
    a << 1, 1, 0,
         0, 1, 1;
    Vector b(2);
    b << 1, 1;
    cases.push_back({a, b, GroupStructure(3, {{0, 1}, {2}})});
  }
  {
    Matrix a(2, 4);
    a << 1, 0.3, 0.2, 0,
         0, 1, 0.5, 0.1;
    Vector b(2);
    b << 1, 0.5;
    cases.push_back({a, b, GroupStructure(4, {{0, 1}, {2, 3}})});
  }
  {
    Matrix a(1, 3);
    a << 0, 0, 1.0 / std::sqrt(3.0);
    Vector b(1);
    b << 1.0 / std::sqrt(3.0);
    cases.push_back({a, b, GroupStructure(3, {{0, 1}, {2}})});
  }
  {
    Matrix a(1, 3);
    a << 1, 2, 0;
    Vector b(1);
    b << 2;
    cases.push_back({a, b, GroupStructure(3, {{0}, {1, 2}})});
  }
  for (std::size_t i = 0; i < cases.size(); ++i) {
    SCOPED_TRACE("case " + std::to_string(i));
    const ConeProgram prog = make_program(cases[i].a, cases[i].b, cases[i].gs);
    const ConeSolution sol = solve_minmax_group_norm(prog);
    ASSERT_EQ(sol.status, SolveStatus::optimal);
    EXPECT_NEAR(sol.value, grid_search_value(prog, 1e-3), 2e-3);
  }
}

TEST(ConeSolver, ValueIsInvariantUnderJointScaling) {
  Matrix a(2, 4);
  a << 1, 0.3, 0.2, 0,
       0, 1, 0.5, 0.1;
  Vector b(2);
  b << 1, 0.5;
  const GroupStructure gs(4, {{0, 1}, {2, 3}});
  const double reference = solve_minmax_group_norm(make_program(a, b, gs)).value;
  for (const double alpha : {1e-3, 1e3}) {
    const ConeSolution sol = solve_minmax_group_norm(make_program(alpha * a, alpha * b, gs));
    ASSERT_EQ(sol.status, SolveStatus::optimal);
    EXPECT_NEAR(sol.value, reference, 1e-7 * std::max(1.0, reference));
  }
}

TEST(ConeSolver, InconsistentSystemIsFlaggedWithCertificate) {
  Matrix a(2, 2);
  a << 1, 0,
       1, 0;
  Vector b(2);
  b << 1, 2;
  const ConeSolution sol = solve_minmax_group_norm(make_program(a, b, GroupStructure::singletons(2)));
  EXPECT_EQ(sol.status, SolveStatus::infeasible);
  // b - A A^+ b witnesses b outside the range of A.
  const Vector residual = b - a * (pseudoinverse(a) * b);
  EXPECT_GT(sol.infeasibility.norm(), 1e-9);
  EXPECT_LT((sol.infeasibility - residual).norm(), 1e-12);
}

TEST(ConeSolver, EmptyConstraintSetGivesZero) {
  const ConeSolution sol =
      solve_minmax_group_norm(make_program(Matrix::Zero(0, 3), Vector::Zero(0), GroupStructure(3, {{0, 1}, {2}})));
  ASSERT_EQ(sol.status, SolveStatus::optimal);
  EXPECT_DOUBLE_EQ(sol.value, 0.0);
  EXPECT_LT(sol.z.norm(), 1e-15);
}

TEST(ConeSolver, KktResidualsAtAnalyticOptimum) {
  Matrix a(1, 2);
  a << 1, 1;
  Vector b(1);
  b << 2;
  const ConeProgram prog = make_program(a, b, GroupStructure::singletons(2));
  Vector z(2);
  z << 1, 1;
  const auto [primal, stationarity] = kkt_residuals(prog, z);
  EXPECT_LE(primal, 1e-9);
  EXPECT_LE(stationarity, 1e-9);
}

TEST(ConeSolver, KktResidualsSeparateFeasibilityFromOptimality) {
  Matrix a(1, 2);
  a << 1, 1;
  Vector b(1);
  b << 2;
  const ConeProgram prog = make_program(a, b, GroupStructure::singletons(2));
  {
    const auto [primal, stationarity] = kkt_residuals(prog, Vector::Zero(2));
    EXPECT_NEAR(primal, b.norm(), 1e-15);
    (void)stationarity;
  }
  {
    Vector z(2);
    z << 2, 0;  // feasible but not the balanced optimum
    const auto [primal, stationarity] = kkt_residuals(prog, z);
    EXPECT_LE(primal, 1e-12);
    EXPECT_GT(stationarity, 1e-8);
  }
  Vector wrong(3);
  wrong << 0, 0, 0;
  EXPECT_THROW(kkt_residuals(prog, wrong), std::invalid_argument);
}

// Fixed-seed coordinate-sparse instances solved independently with an LP
// solver (the max-of-absolute-values program linearizes exactly). The frozen
// values pin the solver against regressions at realistic scale.
TEST(ConeSolver, MatchesLinearProgrammingOracleOnSparseInstances) {
  struct Frozen {
    std::uint64_t seed;
    double value;
  };
  const std::vector<Frozen> frozen = {
      {50, 0.434043295393},
      {51, 0.462363802963},
      {52, 0.445468555213},
      {53, 0.356915822638},
      {54, 0.438714705650},
  };
  EnsembleSpec spec;
  spec.m = 60;
  spec.n = 400;
  spec.q = 400;
  spec.group_size = 1;
  spec.k = 3;
  for (const auto& f : frozen) {
    SCOPED_TRACE("seed " + std::to_string(f.seed));
    spec.seed = f.seed;
    const Problem prob = generate_instance(spec);
    const ModelDecomposition dec = model_decomposition(prob);
    const ConeProgram prog = source_program(prob, dec, cokernel_rows(prob.phi));
    const ConeSolution sol = solve_minmax_group_norm(prog);
    ASSERT_EQ(sol.status, SolveStatus::optimal);
    EXPECT_NEAR(sol.value, f.value, 1e-8);
  }
}

}  // namespace
}  // namespace sharpcert
