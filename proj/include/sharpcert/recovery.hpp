#pragma once

// Recovery solvers for the noisy problem: the penalized form
// min 1/2 ||Phi x - y||^2 + mu * group_norm(D* x) and the constrained form
// min group_norm(D* x) s.t. ||Phi x - y|| <= delta, plus the noise-sweep
// harness that measures empirical error rates against the certified bounds.
// Identity D gets an accelerated proximal gradient with function restart;
// general D gets a primal-dual splitting with the dual iterate confined to
// the scaled unit ball of the max-of-block-norms norm. The constrained form
// rides a bisection on mu through the penalized solver.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sharpcert/certificates.hpp"
#include "sharpcert/groups.hpp"
#include "sharpcert/linalg.hpp"
#include "sharpcert/model.hpp"
#include "sharpcert/rng.hpp"

namespace sharpcert {

enum class RecoveryMode { lagrangian, constrained };

inline const char* to_string(RecoveryMode m) {
  return m == RecoveryMode::lagrangian ? "lagrangian" : "constrained";
}

struct RecoverySettings {
  double tol = 1e-8;          // composite optimality residual target
  int max_iterations = 200000;
  double tol_match = 1e-6;    // relative residual match for the bisection
};

struct RecoveryRun {
  RecoveryMode mode = RecoveryMode::lagrangian;
  double delta = 0.0;  // noise level the run was asked to handle
  double mu = 0.0;     // penalty in effect (bisection result for constrained)
  Vector x_hat;
  double error = 0.0;  // ||x_hat - x0||
  std::vector<double> objective_trace;
  double kkt_residual = 0.0;
  int iterations = 0;
  double wall_time_s = 0.0;
  bool converged = false;
};

namespace detail {

// Optimality residual of the penalized problem at x with subgradient
// candidate vhat: the Fermat equation residual plus the distance of vhat from
// the group-norm subdifferential at D* x. Exact zeros in D* x (the proximal
// solvers produce them) give a clean active/inactive split.
inline double lagrangian_kkt(const Problem& prob, const Vector& y, double mu, const Vector& x,
                             const Vector& vhat) {
  const Vector grad = prob.phi.transpose() * (prob.phi * x - y);
  const double scale = std::max(1.0, (prob.phi.transpose() * y).norm());
  const double r1 = (grad + mu * (prob.d * vhat)).norm() / scale;
  const Vector u = prob.dstar(x);
  const double cut = 1e-10 * std::max(1.0, dual_group_norm(u, prob.groups));
  double viol2 = 0.0;
  for (const auto& g : prob.groups.groups) {
    const double un = block_norm(u, g);
    if (un > cut) {
      double d2 = 0.0;
      for (int i : g) {
        const double di = vhat(i) - u(i) / un;
        d2 += di * di;
      }
      viol2 += d2;
    } else {
      const double excess = std::max(0.0, block_norm(vhat, g) - 1.0);
      viol2 += excess * excess;
    }
  }
  return std::max(r1, std::sqrt(viol2));
}

struct PenalizedResult {
  Vector x;
  Vector vhat;  // subgradient candidate certifying x
  std::vector<double> trace;
  double kkt = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Accelerated proximal gradient with function restart for identity D. The
// prox step is the block soft threshold, so the subgradient candidate
// (u - z)/(mu t) is exact at every iterate.
inline PenalizedResult penalized_identity(const Problem& prob, const Vector& y, double mu,
                                          const RecoverySettings& st, const Vector& warm) {
  const double lip = [&] {
    const double s = RankRevealingDecomposition(prob.phi).sigma_max();
    return std::max(s * s, 1e-12);
  }();
  const double t = 1.0 / lip;
  PenalizedResult out;
  out.vhat = Vector::Zero(prob.p());
  Vector z = warm;
  Vector yk = z;
  double tk = 1.0;
  const auto objective = [&](const Vector& x) {
    return 0.5 * (prob.phi * x - y).squaredNorm() + mu * group_norm(x, prob.groups);
  };
  double f_prev = objective(z);
  out.trace.push_back(f_prev);
  for (int it = 1; it <= st.max_iterations; ++it) {
    out.iterations = it;
    Vector u = yk - t * (prob.phi.transpose() * (prob.phi * yk - y));
    Vector zn = block_soft_threshold(u, mu * t, prob.groups);
    double f_new = objective(zn);
    if (f_new > f_prev) {
      // Momentum overshot: restart and take the plain proximal step from the
      // current iterate in the same pass, so the convergence check below is
      // still reached. At the numerical floor the plain step may exceed the
      // reference by rounding; the iterate is kept regardless.
      yk = z;
      tk = 1.0;
      u = yk - t * (prob.phi.transpose() * (prob.phi * yk - y));
      zn = block_soft_threshold(u, mu * t, prob.groups);
      f_new = objective(zn);
    }
    const double tkn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    yk = zn + ((tk - 1.0) / tkn) * (zn - z);
    out.vhat = (u - zn) / (mu * t);
    z = zn;
    tk = tkn;
    f_prev = std::min(f_prev, f_new);
    out.trace.push_back(f_new);
    if (it % 10 == 0 || it == st.max_iterations) {
      out.kkt = lagrangian_kkt(prob, y, mu, z, out.vhat);
      if (out.kkt <= st.tol) {
        out.converged = true;
        break;
      }
    }
  }
  out.x = std::move(z);
  if (!out.converged) out.kkt = lagrangian_kkt(prob, y, mu, out.x, out.vhat);
  return out;
}

// Primal-dual splitting for general D: the dual ascends inside the mu-ball of
// the max-of-block-norms norm, the primal descends through the quadratic's
// prox, which reuses one factorization of I + tau Phi' Phi across iterations.
inline PenalizedResult penalized_analysis(const Problem& prob, const Vector& y, double mu,
                                          const RecoverySettings& st, const Vector& warm) {
  const double dnorm = std::max(RankRevealingDecomposition(prob.d).sigma_max(), 1e-12);
  const double tau = std::sqrt(0.95) / dnorm;
  const double sigma = tau;
  const Eigen::Index n = prob.phi.cols();
  const Matrix sys = Matrix::Identity(n, n) + tau * (prob.phi.transpose() * prob.phi);
  const Eigen::LDLT<Matrix> fac(sys);
  const Vector rhs_const = tau * (prob.phi.transpose() * y);

  PenalizedResult out;
  Vector x = warm;
  Vector xbar = x;
  Vector v = Vector::Zero(prob.p());
  const auto objective = [&](const Vector& xx) {
    return 0.5 * (prob.phi * xx - y).squaredNorm() + mu * prob.objective(xx);
  };
  out.trace.push_back(objective(x));
  for (int it = 1; it <= st.max_iterations; ++it) {
    v += sigma * prob.dstar(xbar);
    for (const auto& g : prob.groups.groups) {
      const double vn = block_norm(v, g);
      if (vn > mu)
        for (int i : g) v(i) *= mu / vn;
    }
    const Vector xn = fac.solve(x - tau * (prob.d * v) + rhs_const);
    xbar = 2.0 * xn - x;
    x = xn;
    out.trace.push_back(objective(x));
    out.iterations = it;
    if (it % 20 == 0 || it == st.max_iterations) {
      out.vhat = v / mu;
      out.kkt = lagrangian_kkt(prob, y, mu, x, out.vhat);
      if (out.kkt <= st.tol) {
        out.converged = true;
        break;
      }
    }
  }
  out.x = std::move(x);
  if (out.vhat.size() == 0) out.vhat = v / mu;
  if (!out.converged) out.kkt = lagrangian_kkt(prob, y, mu, out.x, out.vhat);
  return out;
}

inline PenalizedResult penalized(const Problem& prob, const Vector& y, double mu,
                                 const RecoverySettings& st, const Vector& warm) {
  return prob.d_identity ? penalized_identity(prob, y, mu, st, warm)
                         : penalized_analysis(prob, y, mu, st, warm);
}

// Smallest penalty that provably annihilates the solution, used as the upper
// end of the bisection bracket: at mu >= this, zero is optimal.
inline double annihilation_mu(const Problem& prob, const Vector& y) {
  const Vector g = prob.phi.transpose() * y;
  if (prob.d_identity) return dual_group_norm(g, prob.groups);
  return dual_group_norm(RankRevealingDecomposition(prob.d).pinv_apply(g), prob.groups) + 1.0;
}

}  // namespace detail

inline RecoveryRun solve_lagrangian(const Problem& prob, const Vector& y, double mu,
                                    const RecoverySettings& st = {}) {
  if (!(mu > 0)) throw std::invalid_argument("solve_lagrangian: mu must be > 0");
  const auto t0 = std::chrono::steady_clock::now();
  detail::PenalizedResult pr =
      detail::penalized(prob, y, mu, st, Vector::Zero(prob.n()));
  RecoveryRun run;
  run.mode = RecoveryMode::lagrangian;
  run.mu = mu;
  run.x_hat = std::move(pr.x);
  run.error = (run.x_hat - prob.x0).norm();
  run.objective_trace = std::move(pr.trace);
  run.kkt_residual = pr.kkt;
  run.iterations = pr.iterations;
  run.converged = pr.converged;
  run.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

// Constrained recovery via the penalty path: the residual ||Phi x(mu) - y||
// grows monotonically with mu, so a bisection pins the mu whose residual
// matches the ball radius. Two short circuits first: an objective-zero point
// already inside the ball is optimal outright, and delta = 0 is served by
// driving mu toward zero until the data constraint binds to solver accuracy.
inline RecoveryRun solve_constrained(const Problem& prob, const Vector& y, double delta,
                                     const RecoverySettings& st = {}) {
  if (delta < 0) throw std::invalid_argument("solve_constrained: delta must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();
  RecoveryRun run;
  run.mode = RecoveryMode::constrained;
  run.delta = delta;

  const auto finish = [&](detail::PenalizedResult&& pr, double mu) {
    run.mu = mu;
    run.x_hat = std::move(pr.x);
    run.error = (run.x_hat - prob.x0).norm();
    run.objective_trace = std::move(pr.trace);
    run.kkt_residual = pr.kkt;
    run.iterations += pr.iterations;
    run.converged = pr.converged;
    run.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
  };

  const Matrix kd = kernel_basis(prob.d.transpose());
  Vector x_zero = Vector::Zero(prob.n());
  if (kd.cols() > 0) x_zero = kd * RankRevealingDecomposition(prob.phi * kd).pinv_apply(y);
  if ((prob.phi * x_zero - y).norm() <= delta) {
    detail::PenalizedResult pr;
    pr.x = x_zero;
    pr.vhat = Vector::Zero(prob.p());
    pr.converged = true;
    return finish(std::move(pr), 0.0);
  }

  const double mu_hi0 = detail::annihilation_mu(prob, y);
  if (delta == 0.0) {
    const double target = 1e-9 * std::max(1.0, y.norm());
    double mu = std::max(mu_hi0 * 1e-3, 1e-12);
    Vector warm = Vector::Zero(prob.n());
    detail::PenalizedResult pr;
    for (int round = 0; round < 16; ++round) {
      pr = detail::penalized(prob, y, mu, st, warm);
      run.iterations += pr.iterations;
      warm = pr.x;
      if ((prob.phi * pr.x - y).norm() <= target || mu <= 1e-15) break;
      mu /= 10.0;
    }
    run.iterations -= pr.iterations;  // finish() adds the last round back
    // At a vanishing radius the convergence criterion is the data equation
    // itself; the subgradient candidate of the last stage is scaled by 1/mu
    // and cannot certify stationarity to working precision.
    pr.converged = (prob.phi * pr.x - y).norm() <= target;
    return finish(std::move(pr), mu);
  }

  double lo = 1e-12 * std::max(1.0, mu_hi0);
  double hi = std::max(mu_hi0, lo * 10.0);
  Vector warm = Vector::Zero(prob.n());
  const auto residual_at = [&](double mu, detail::PenalizedResult& pr) {
    pr = detail::penalized(prob, y, mu, st, warm);
    run.iterations += pr.iterations;
    warm = pr.x;
    return (prob.phi * pr.x - y).norm();
  };
  detail::PenalizedResult pr;
  double res_hi = residual_at(hi, pr);
  for (int grow = 0; grow < 60 && res_hi < delta; ++grow) {
    hi *= 10.0;
    res_hi = residual_at(hi, pr);
  }
  detail::PenalizedResult best = pr;
  double best_mu = hi;
  double best_gap = std::abs(res_hi - delta);
  for (int it = 0; it < 200; ++it) {
    if (best_gap <= st.tol_match * delta) break;
    const double mid = std::sqrt(lo * hi);
    const double res = residual_at(mid, pr);
    if (std::abs(res - delta) < best_gap) {
      best = pr;
      best_mu = mid;
      best_gap = std::abs(res - delta);
    }
    (res < delta ? lo : hi) = mid;
  }
  run.iterations -= best.iterations;  // finish() adds the winning round back
  return finish(std::move(best), best_mu);
}

struct RateCell {
  double delta = 0.0;
  int draw = 0;
  RecoveryMode mode = RecoveryMode::lagrangian;
  double error = 0.0;
  double bound = 0.0;  // 0 when no bound applies
  int iterations = 0;
  double kkt_residual = 0.0;
  bool failed = false;
};

struct RateFit {
  std::vector<double> deltas;
  std::vector<double> median_error_lagrangian;
  std::vector<double> median_error_constrained;
  std::vector<double> bound_lagrangian;   // per delta; 0 when not applicable
  std::vector<double> bound_constrained;  // per delta; 0 when not applicable
  double slope_lagrangian = 0.0;
  double intercept_lagrangian = 0.0;
  double slope_constrained = 0.0;
  double intercept_constrained = 0.0;
  std::vector<RateCell> cells;
  int failures = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

inline std::pair<double, double> fit_loglog(const std::vector<double>& deltas,
                                            const std::vector<double>& errs) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int k = 0;
  for (size_t i = 0; i < deltas.size(); ++i) {
    if (!(deltas[i] > 0) || !(errs[i] > 0)) continue;
    const double lx = std::log10(deltas[i]), ly = std::log10(errs[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++k;
  }
  if (k < 2) return {0.0, 0.0};
  const double denom = k * sxx - sx * sx;
  if (denom == 0.0) return {0.0, 0.0};
  const double slope = (k * sxy - sx * sy) / denom;
  return {slope, (sy - slope * sx) / k};
}

}  // namespace detail

// Noise sweep: for each (delta, draw) cell, perturb y0 by a noise vector of
// exact norm delta from that cell's own counter stream, solve both recovery
// modes, and compare errors to the certified bounds. Medians across draws
// feed the log-log slope fit; delta = 0 cells validate exact recovery and
// stay out of the fit.
inline RateFit rate_experiment(const Problem& prob, const CertificateReport& report,
                               const std::vector<double>& deltas, double mu_ratio, int draws,
                               std::uint64_t seed, const RecoverySettings& st = {},
                               double kappa = 0.0) {
  RateFit fit;
  fit.deltas = deltas;
  const bool sharp = report.verdict == Verdict::sharp;
  for (size_t i = 0; i < deltas.size(); ++i) {
    const double delta = deltas[i];
    const RecoveryBoundSet bounds = recovery_bounds(report, delta, mu_ratio, kappa);
    const double bound_lag =
        sharp ? (bounds.est.applicable ? bounds.est.value : 0.0)
              : (bounds.est3.applicable ? bounds.est3.value : 0.0);
    const double bound_con =
        sharp ? (bounds.est2.applicable ? bounds.est2.value : 0.0)
              : (bounds.est4.applicable ? bounds.est4.value : 0.0);
    fit.bound_lagrangian.push_back(bound_lag);
    fit.bound_constrained.push_back(bound_con);
    std::vector<double> errs_lag, errs_con;
    for (int j = 0; j < draws; ++j) {
      CounterRng rng(seed, static_cast<std::uint64_t>(i), static_cast<std::uint64_t>(j));
      const Vector y = prob.y0 + rng.sphere_vector(prob.m(), delta);
      RateCell lag;
      lag.delta = delta;
      lag.draw = j;
      lag.mode = RecoveryMode::lagrangian;
      lag.bound = bound_lag;
      RateCell con = lag;
      con.mode = RecoveryMode::constrained;
      con.bound = bound_con;
      try {
        const RecoveryRun r = delta > 0 ? solve_lagrangian(prob, y, mu_ratio * delta, st)
                                        : solve_constrained(prob, y, 0.0, st);
        lag.error = r.error;
        lag.iterations = r.iterations;
        lag.kkt_residual = r.kkt_residual;
        errs_lag.push_back(r.error);
      } catch (const std::exception&) {
        lag.failed = true;
        ++fit.failures;
      }
      try {
        const RecoveryRun r = solve_constrained(prob, y, delta, st);
        con.error = r.error;
        con.iterations = r.iterations;
        con.kkt_residual = r.kkt_residual;
        errs_con.push_back(r.error);
      } catch (const std::exception&) {
        con.failed = true;
        ++fit.failures;
      }
      fit.cells.push_back(lag);
      fit.cells.push_back(con);
    }
    fit.median_error_lagrangian.push_back(detail::median(errs_lag));
    fit.median_error_constrained.push_back(detail::median(errs_con));
  }
  std::tie(fit.slope_lagrangian, fit.intercept_lagrangian) =
      detail::fit_loglog(fit.deltas, fit.median_error_lagrangian);
  std::tie(fit.slope_constrained, fit.intercept_constrained) =
      detail::fit_loglog(fit.deltas, fit.median_error_constrained);
  return fit;
}

}  // namespace sharpcert
