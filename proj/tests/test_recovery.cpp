#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "sharpcert/certificates.hpp"
#include "sharpcert/io.hpp"
#include "sharpcert/recovery.hpp"

#ifndef SHARPCERT_FIXTURE_DIR
#define SHARPCERT_FIXTURE_DIR "tests/fixtures"
#endif

namespace sharpcert {
namespace {

std::string fixture(const char* name) {
  return std::string(SHARPCERT_FIXTURE_DIR) + "/" + name;
}

// Identity measurement on a single two-coordinate group: the penalized
// minimizer is the shrinkage of y and everything is analytic.
Problem shrinkage_problem() {
  Vector x0(2);
  x0 << 3, 4;
  return Problem::with_identity_d(Matrix::Identity(2, 2), GroupStructure(2, {{0, 1}}), x0);
}

Problem general_analysis_problem(std::uint64_t seed) {
  CounterRng rng(seed);
  const int m = 6, n = 10, p = 10;
  Matrix d = rng.normal_matrix(n, p);
  Problem prob(rng.normal_matrix(m, n), d, GroupStructure::contiguous(5, 2),
               rng.normal_vector(n));
  return prob;
}

TEST(SolveLagrangian, ShrinksTheDataBlock) {
  const Problem prob = shrinkage_problem();
  const RecoveryRun run = solve_lagrangian(prob, prob.y0, 2.5);
  ASSERT_TRUE(run.converged);
  Vector expected(2);
  expected << 1.5, 2.0;
  EXPECT_LT((run.x_hat - expected).norm(), 1e-7);
  EXPECT_LE(run.kkt_residual, 1e-8);
  const RecoveryRun dead = solve_lagrangian(prob, prob.y0, 5.0 + 1e-3);
  EXPECT_LT(dead.x_hat.norm(), 1e-7);
  EXPECT_THROW(solve_lagrangian(prob, prob.y0, 0.0), std::invalid_argument);
}

TEST(SolveLagrangian, ObjectiveTraceNeverIncreases) {
  const Problem prob = load_problem(fixture("ex12.json"));
  const RecoveryRun run = solve_lagrangian(prob, prob.y0, 0.3);
  ASSERT_TRUE(run.converged);
  ASSERT_GE(run.objective_trace.size(), 2u);
  for (size_t i = 1; i < run.objective_trace.size(); ++i) {
    EXPECT_LE(run.objective_trace[i], run.objective_trace[i - 1] + 1e-12);
  }
}

TEST(SolveLagrangian, AnalysisPathMatchesIdentityPathOnIdentityDictionary) {
  const Problem prob = load_problem(fixture("ex12.json"));
  const RecoveryRun fista = solve_lagrangian(prob, prob.y0, 0.4);
  // Same data re-declared with a materialized identity dictionary forces the
  // primal-dual path; both must land on the same minimizer.
  const Problem explicit_d(prob.phi, Matrix::Identity(3, 3), prob.groups, prob.x0);
  ASSERT_FALSE(explicit_d.d_identity);
  const RecoveryRun cp = solve_lagrangian(explicit_d, explicit_d.y0, 0.4);
  ASSERT_TRUE(fista.converged);
  ASSERT_TRUE(cp.converged);
  EXPECT_LT((fista.x_hat - cp.x_hat).norm(), 1e-6);
  EXPECT_LE(cp.kkt_residual, 1e-8);
}

TEST(SolveLagrangian, OrthogonalDictionaryAgreesWithRotatedIdentityModel) {
  // With an orthogonal dictionary Q the analysis problem in x equals the
  // identity problem in z = Q* x composed with Phi Q.
  CounterRng rng(77);
  const Matrix raw = rng.normal_matrix(4, 4);
  const Matrix q = Eigen::HouseholderQR<Matrix>(raw).householderQ();
  const Matrix phi = rng.normal_matrix(3, 4);
  Vector x0(4);
  x0 << 1, 0, -2, 0.5;
  const GroupStructure gs = GroupStructure::contiguous(2, 2);
  const Problem analysis(phi, q, gs, x0);
  const Problem rotated = Problem::with_identity_d(phi * q, gs, q.transpose() * x0);
  const double mu = 0.7;
  const RecoveryRun a = solve_lagrangian(analysis, analysis.y0, mu);
  const RecoveryRun b = solve_lagrangian(rotated, rotated.y0, mu);
  ASSERT_TRUE(a.converged);
  ASSERT_TRUE(b.converged);
  EXPECT_LT((q.transpose() * a.x_hat - b.x_hat).norm(), 1e-6);
}

TEST(SolveLagrangian, FermatResidualMeetsToleranceOnRandomAnalysisProblems) {
  for (const std::uint64_t seed : {61, 62}) {
    const Problem prob = general_analysis_problem(seed);
    const RecoveryRun run = solve_lagrangian(prob, prob.y0, 0.5);
    ASSERT_TRUE(run.converged) << "seed " << seed;
    EXPECT_LE(run.kkt_residual, 1e-8);
  }
}

TEST(SolveConstrained, ResidualMatchesTheRequestedRadius) {
  const Problem prob = load_problem(fixture("ex12.json"));
  CounterRng rng(9, 0, 0);
  const double delta = 0.05;
  const Vector y = prob.y0 + rng.sphere_vector(prob.m(), delta);
  const RecoveryRun run = solve_constrained(prob, y, delta);
  ASSERT_TRUE(run.converged);
  EXPECT_NEAR((prob.phi * run.x_hat - y).norm(), delta, 1e-6 * delta);
  EXPECT_GT(run.mu, 0.0);
}

TEST(SolveConstrained, ReturnedPenaltyReproducesTheSameSolution) {
  const Problem prob = load_problem(fixture("ex12.json"));
  CounterRng rng(10, 0, 0);
  const double delta = 0.05;
  const Vector y = prob.y0 + rng.sphere_vector(prob.m(), delta);
  const RecoveryRun con = solve_constrained(prob, y, delta);
  ASSERT_TRUE(con.converged);
  const RecoveryRun lag = solve_lagrangian(prob, y, con.mu);
  ASSERT_TRUE(lag.converged);
  EXPECT_LT((con.x_hat - lag.x_hat).norm(), 1e-5);
}

TEST(SolveConstrained, InteriorMinimizerShortCircuits) {
  // The kernel of the dictionary transpose absorbs the data: an objective
  // -zero point already fits the ball, so no penalty path is needed.
  Matrix d(2, 1);
  d << 0, 1;
  Problem prob(Matrix::Identity(2, 2), d, GroupStructure(1, {{0}}), (Vector(2) << 2, 0).finished());
  const RecoveryRun run = solve_constrained(prob, prob.y0, 0.5);
  ASSERT_TRUE(run.converged);
  EXPECT_DOUBLE_EQ(run.mu, 0.0);
  EXPECT_LT(prob.objective(run.x_hat), 1e-12);
  EXPECT_LE((prob.phi * run.x_hat - prob.y0).norm(), 0.5 + 1e-9);
}

TEST(SolveConstrained, ZeroRadiusEnforcesTheDataEquation) {
  const Problem prob = load_problem(fixture("ex12.json"));
  const RecoveryRun run = solve_constrained(prob, prob.y0, 0.0);
  ASSERT_TRUE(run.converged);
  EXPECT_LE((prob.phi * run.x_hat - prob.y0).norm(), 1e-8 * std::max(1.0, prob.y0.norm()));
  EXPECT_THROW(solve_constrained(prob, prob.y0, -1.0), std::invalid_argument);
}

TEST(AnnihilationMu, KillsTheSolutionAtAndAboveTheThreshold) {
  const Problem prob = shrinkage_problem();
  const double mu0 = detail::annihilation_mu(prob, prob.y0);
  EXPECT_NEAR(mu0, 5.0, 1e-12);
  const RecoveryRun above = solve_lagrangian(prob, prob.y0, mu0 * 1.01);
  EXPECT_LT(above.x_hat.norm(), 1e-7);
  const RecoveryRun below = solve_lagrangian(prob, prob.y0, mu0 * 0.5);
  EXPECT_GT(below.x_hat.norm(), 1.0);
}

TEST(RateStatistics, MedianAndLogLogFit) {
  EXPECT_DOUBLE_EQ(detail::median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(detail::median({4.0, 1.0, 2.0, 3.0}), 2.5);
  // Errors proportional to delta give slope one and the exact intercept.
  const std::vector<double> deltas = {1e-1, 1e-2, 1e-3};
  const std::vector<double> errors = {2e-1, 2e-2, 2e-3};
  const auto [slope, intercept] = detail::fit_loglog(deltas, errors);
  EXPECT_NEAR(slope, 1.0, 1e-12);
  EXPECT_NEAR(intercept, std::log10(2.0), 1e-12);
  const auto degenerate = detail::fit_loglog({1e-1}, {1.0});
  EXPECT_DOUBLE_EQ(degenerate.first, 0.0);
}

TEST(RateExperiment, SharpProblemStaysUnderLinearBoundsWithUnitSlope) {
  const Problem prob = load_problem(fixture("sharp_toy.json"));
  ClassifyOptions opts;
  opts.exact_mode = true;
  const CertificateReport rep = classify(prob, opts);
  ASSERT_EQ(rep.verdict, Verdict::sharp);
  const std::vector<double> deltas = {1e-1, 1e-2, 1e-3};
  const RateFit fit = rate_experiment(prob, rep, deltas, 1.0, 3, 2026);
  EXPECT_EQ(fit.failures, 0);
  for (const RateCell& cell : fit.cells) {
    ASSERT_FALSE(cell.failed);
    EXPECT_LE(cell.error, cell.bound * (1.0 + 1e-9));
  }
  EXPECT_NEAR(fit.slope_lagrangian, 1.0, 0.15);
  EXPECT_NEAR(fit.slope_constrained, 1.0, 0.15);
}

TEST(RateExperiment, ZeroNoiseRecoversTheCandidateExactly) {
  const Problem prob = load_problem(fixture("sharp_toy.json"));
  ClassifyOptions opts;
  opts.exact_mode = true;
  const CertificateReport rep = classify(prob, opts);
  const RateFit fit = rate_experiment(prob, rep, {0.0}, 1.0, 2, 11);
  EXPECT_EQ(fit.failures, 0);
  for (const RateCell& cell : fit.cells) EXPECT_LE(cell.error, 1e-7);
}

TEST(RateExperiment, DeskScalePenalizedSolveMeetsToleranceQuickly) {
  EnsembleSpec spec;
  spec.m = 40;
  spec.n = 120;
  spec.q = 30;
  spec.group_size = 4;
  spec.k = 3;
  spec.seed = 301;
  const Problem prob = generate_instance(spec);
  CounterRng rng(302, 0, 0);
  const double delta = 1e-3;
  const Vector y = prob.y0 + rng.sphere_vector(prob.m(), delta);
  const RecoveryRun run = solve_lagrangian(prob, y, delta);
  ASSERT_TRUE(run.converged);
  EXPECT_LE(run.kkt_residual, 1e-8);
  EXPECT_LT(run.wall_time_s, 10.0);
}

}  // namespace
}  // namespace sharpcert
