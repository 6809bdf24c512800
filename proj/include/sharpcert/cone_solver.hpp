#pragma once

// Solver for the certificate programs: minimize the linf/l2 group norm of z
// subject to A z = b. The algorithm is ADMM on the epigraph splitting (z, t)
// with one second-order-cone copy per group, over-relaxation, and an adaptive
// penalty. Two refinements close the duality gap long before the ADMM tail
// does: a polish step that fixes the active blocks' directions and re-solves
// the remaining least-squares system exactly, and a certified lower bound
// built from the minimum-norm convex combination of active-block subgradients
// projected onto the constraint row space. The reported gap is a true primal
// dual sandwich, not a heuristic.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "sharpcert/groups.hpp"
#include "sharpcert/linalg.hpp"

namespace sharpcert {

struct ConeTolerances {
  double primal = 1e-9;
  double stationarity = 1e-8;
  double gap = 1e-8;
  int max_iterations = 50000;
};

struct ConeProgram {
  Matrix a;               // rows x d
  Vector b;               // rows
  GroupStructure groups;  // over the d free coordinates
  std::vector<int> free_coords;  // original coordinate ids (informational)
  ConeTolerances tol;

  void validate() const {
    require_finite(a, "ConeProgram.a");
    if (!b.allFinite()) throw std::invalid_argument("ConeProgram.b: non-finite entries");
    if (a.rows() != b.size()) throw std::invalid_argument("ConeProgram: A rows != b length");
    if (groups.p != a.cols()) throw std::invalid_argument("ConeProgram: groups must cover A cols");
    groups.validate();
  }
};

enum class SolveStatus { optimal, infeasible, max_iterations };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::infeasible: return "infeasible";
    default: return "max-iterations";
  }
}

struct ConeSolution {
  Vector z;                       // minimizer over the free coordinates
  double value = 0.0;             // max_g ||z_g||
  double primal_residual = 0.0;   // ||A z - b||
  double stationarity_residual = 0.0;
  double gap = 0.0;               // certified value - lower bound
  int iterations = 0;
  SolveStatus status = SolveStatus::optimal;
  Vector dual;                    // multiplier for A z = b (length rows)
  Vector infeasibility;           // b - A A^+ b when status == infeasible
};

namespace detail {

// Euclidean projection onto the second-order cone {(y, s) : ||y|| <= s}.
inline void soc_project(Vector& y, double& s) {
  const double ny = y.norm();
  if (ny <= s) return;
  if (ny <= -s) {
    y.setZero();
    s = 0.0;
    return;
  }
  const double beta = 0.5 * (ny + s);
  y *= beta / ny;
  s = beta;
}

// Euclidean projection onto the probability simplex.
inline Vector simplex_project(const Vector& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    css += u[static_cast<size_t>(i)];
    const double cand = (css - 1.0) / static_cast<double>(i + 1);
    if (u[static_cast<size_t>(i)] - cand > 0) theta = cand;
  }
  return (v.array() - theta).max(0.0).matrix();
}

// min theta' G theta over the probability simplex (accelerated projected
// gradient with function restart). G is a Gram matrix, so L = lambda_max(G).
inline Vector simplex_qp(const Matrix& g, int iters = 2000) {
  const Eigen::Index a = g.rows();
  Eigen::SelfAdjointEigenSolver<Matrix> es(g, Eigen::EigenvaluesOnly);
  const double lip = std::max(es.eigenvalues().maxCoeff(), 1e-12);
  Vector th = Vector::Constant(a, 1.0 / static_cast<double>(a));
  Vector y = th;
  double tk = 1.0;
  double f_prev = th.dot(g * th);
  for (int it = 0; it < iters; ++it) {
    Vector thn = simplex_project(y - (g * y) / lip);
    const double f_new = thn.dot(g * thn);
    double tkn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    if (f_new > f_prev) {
      y = thn;
      tkn = 1.0;
    } else {
      y = thn + ((tk - 1.0) / tkn) * (thn - th);
    }
    th = thn;
    tk = tkn;
    f_prev = f_new;
  }
  return th;
}

// Constraint set in reduced form: {z : Vr z = bh} with orthonormal rows Vr.
struct ReducedConstraints {
  Matrix vr;    // r x d
  Vector bh;    // r
  Vector z_ls;  // min-norm feasible point
  Matrix ur;    // rows x r, left factor (maps reduced duals to original rows)
  Vector sr;    // r positive singular values

  explicit ReducedConstraints(const RankRevealingDecomposition& f, const Vector& b) {
    const Eigen::Index r = f.rank;
    vr = f.right.leftCols(r).transpose();
    ur = f.left.leftCols(r);
    sr = f.singular_values.head(r);
    bh = (ur.transpose() * b).cwiseQuotient(sr);
    z_ls = vr.transpose() * bh;
  }

  Vector project_feasible(const Vector& z) const {
    return z - vr.transpose() * (vr * z) + z_ls;
  }

  // Original-row dual from a reduced dual coefficient vector.
  Vector lift_dual(const Vector& lam_red) const {
    return ur * lam_red.cwiseQuotient(sr);
  }
};

struct BlockView {
  double value(const Vector& z, const GroupStructure& gs) const {
    return dual_group_norm(z, gs);
  }
};

// Indices of blocks whose norm reaches the max within the slack.
inline std::vector<int> active_blocks(const Vector& z, const GroupStructure& gs, double ub,
                                      double slack) {
  std::vector<int> act;
  for (int g = 0; g < gs.count(); ++g)
    if (block_norm(z, gs.groups[g]) >= ub - slack) act.push_back(g);
  return act;
}

struct DualBound {
  double lower = 0.0;
  double stationarity = kInf;
  Vector dual_red;           // reduced-coefficient dual (length r)
  std::vector<int> blocks;   // candidate blocks the weights refer to
  Vector theta;              // convex weights over blocks (complementary slackness)
};

// Lower bound max |b'lam| / ||A* lam||_{l1/l2} over lam built from the
// minimum-norm point in the convex hull of projected active subgradients.
// The bound is valid for any weights, and exact whenever the candidate list
// contains the true active set, so supersets are safe. The weights' support
// then names the true active blocks, which the caller can feed back into the
// polish step.
inline DualBound dual_bound(const ReducedConstraints& red, const GroupStructure& gs,
                            const Vector& z, double ub, const std::vector<int>& act) {
  DualBound out;
  if (ub <= 0) return out;
  std::vector<int> kept;
  for (int g : act)
    if (block_norm(z, gs.groups[static_cast<size_t>(g)]) > 0) kept.push_back(g);
  if (kept.empty()) return out;
  const Eigen::Index a = static_cast<Eigen::Index>(kept.size());
  const Eigen::Index r = red.vr.rows();
  // c_g = Vr * embed(unit direction of block g); Gram = I - C'C.
  Matrix c(r, a);
  for (Eigen::Index j = 0; j < a; ++j) {
    const auto& coords = gs.groups[static_cast<size_t>(kept[static_cast<size_t>(j)])];
    const double nrm = block_norm(z, coords);
    Vector cj = Vector::Zero(r);
    for (int i : coords) cj += (z(i) / nrm) * red.vr.col(i);
    c.col(j) = cj;
  }
  Matrix gram = Matrix::Identity(a, a) - c.transpose() * c;

  const auto consider = [&](const Vector& th) {
    const Vector lam_red = c * th;  // row-space coefficients of u(th)
    const Vector gvec = red.vr.transpose() * lam_red;
    double den = 0.0;
    for (const auto& coords : gs.groups) den += block_norm(gvec, coords);
    if (den <= 1e-300) return;
    const double lower = std::abs(red.bh.dot(lam_red)) / den;
    if (out.dual_red.size() == 0 || lower > out.lower) {
      out.lower = lower;
      out.stationarity = std::sqrt(std::max(0.0, th.dot(gram * th)));
      out.dual_red = lam_red / den;  // normalized so |b'lam| equals the bound
      out.blocks = kept;
      out.theta = th;
    }
  };

  const Vector th0 = simplex_qp(gram);
  consider(th0);
  // The exact multiplier lies in ker(Gram) once the pattern is right, so a
  // simplex point found there by alternating projections closes the gap in
  // one step instead of riding the projected-gradient tail.
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
  const double lmax = es.eigenvalues().maxCoeff();
  Eigen::Index kdim = 0;
  while (kdim < a && es.eigenvalues()(kdim) <= 1e-9 * std::max(1.0, lmax)) ++kdim;
  if (kdim > 0 && kdim < a) {
    const Matrix kern = es.eigenvectors().leftCols(kdim);
    Vector th = th0;
    for (int round = 0; round < 300; ++round) {
      th = kern * (kern.transpose() * th);
      th = simplex_project(th);
    }
    consider(th);
  }
  return out;
}

struct PolishResult {
  Vector z;            // feasible point rebuilt from the pattern
  double value = 0.0;  // its objective, max block norm over all groups
  bool proper = true;  // false when some off-pattern block exceeds the pattern level
};

// Fix the direction of each active block and re-solve the remaining linear
// system [t-column | inactive coordinates] u = bh by least squares. When the
// system pins t (no kernel component on the t unknown) the candidate is a
// feasible point whose value is exact for the guessed active pattern. The
// point is a proper vertex only when every off-pattern block stays at or
// below the pattern level t; otherwise the caller gets the point and its true
// value but must not treat the pattern as this point's vertex.
inline std::optional<PolishResult> polish_by_pattern(const ReducedConstraints& red,
                                                     const GroupStructure& gs, const Vector& z,
                                                     const std::vector<int>& act) {
  if (act.empty()) return std::nullopt;
  const Eigen::Index d = red.vr.cols();
  const Eigen::Index r = red.vr.rows();
  std::vector<char> is_act(static_cast<size_t>(gs.count()), 0);
  for (int g : act) is_act[static_cast<size_t>(g)] = 1;
  std::vector<int> free_coords;
  for (int g = 0; g < gs.count(); ++g)
    if (!is_act[static_cast<size_t>(g)])
      for (int i : gs.groups[static_cast<size_t>(g)]) free_coords.push_back(i);

  Vector tcol = Vector::Zero(d);
  for (int g : act) {
    const auto& coords = gs.groups[static_cast<size_t>(g)];
    const double nrm = block_norm(z, coords);
    if (nrm <= 0) return std::nullopt;
    for (int i : coords) tcol(i) = z(i) / nrm;
  }
  Matrix c(r, 1 + static_cast<Eigen::Index>(free_coords.size()));
  c.col(0) = red.vr * tcol;
  for (size_t j = 0; j < free_coords.size(); ++j)
    c.col(1 + static_cast<Eigen::Index>(j)) = red.vr.col(free_coords[j]);

  RankRevealingDecomposition cf(c);
  // t must be determined by the system: reject if the kernel moves it.
  const Matrix ker = cf.kernel();
  if (ker.cols() > 0 && ker.row(0).cwiseAbs().maxCoeff() > 1e-8) return std::nullopt;
  const Vector u = cf.pinv_apply(red.bh);
  const double t = u(0);
  if (!(t >= 0)) return std::nullopt;
  PolishResult out;
  out.z = t * tcol;
  for (size_t j = 0; j < free_coords.size(); ++j)
    out.z(free_coords[j]) = u(1 + static_cast<Eigen::Index>(j));
  const double feas = (red.vr * out.z - red.bh).norm();
  if (feas > 1e-11 * std::max(1.0, red.bh.norm())) return std::nullopt;
  out.value = dual_group_norm(out.z, gs);
  out.proper = out.value <= t * (1.0 + 1e-9) + 1e-15;
  return out;
}

struct PatternDual {
  double lower = 0.0;
  Vector dual_red;  // reduced dual, normalized so |bh'lam| equals the bound
  Vector theta;     // per-pattern-block alignment weights of the raw dual
};

// Exact dual for a fixed active pattern. The multiplier's preimage Vr' lam
// must vanish on inactive coordinates and align with the block direction on
// active ones, so lam lies in the kernel of one linear map built from the
// pattern. Solving for that kernel certifies the pattern's value with no
// iterative residual. A negative alignment weight means the pattern is not
// optimal and names the block that should leave it.
inline std::optional<PatternDual> dual_by_pattern(const ReducedConstraints& red,
                                                  const GroupStructure& gs, const Vector& z,
                                                  const std::vector<int>& act) {
  if (act.empty()) return std::nullopt;
  const Eigen::Index r = red.vr.rows();
  std::vector<char> is_act(static_cast<size_t>(gs.count()), 0);
  for (int g : act) is_act[static_cast<size_t>(g)] = 1;
  std::vector<Vector> cols;
  for (int g = 0; g < gs.count(); ++g) {
    const auto& coords = gs.groups[static_cast<size_t>(g)];
    if (!is_act[static_cast<size_t>(g)]) {
      for (int i : coords) cols.push_back(red.vr.col(i));
      continue;
    }
    const Eigen::Index k = static_cast<Eigen::Index>(coords.size());
    if (k == 1) continue;
    const double nrm = block_norm(z, coords);
    if (nrm <= 0) return std::nullopt;
    Matrix uh(k, 1);
    for (Eigen::Index j = 0; j < k; ++j) uh(j, 0) = z(coords[static_cast<size_t>(j)]) / nrm;
    Eigen::JacobiSVD<Matrix> usvd(uh, Eigen::ComputeFullU);
    for (Eigen::Index c = 1; c < k; ++c) {
      Vector col = Vector::Zero(r);
      for (Eigen::Index j = 0; j < k; ++j)
        col += usvd.matrixU()(j, c) * red.vr.col(coords[static_cast<size_t>(j)]);
      cols.push_back(std::move(col));
    }
  }
  Vector lam;
  if (cols.empty()) {
    lam = red.bh;
  } else {
    Matrix bt(static_cast<Eigen::Index>(cols.size()), r);
    for (size_t j = 0; j < cols.size(); ++j) bt.row(static_cast<Eigen::Index>(j)) = cols[j].transpose();
    const Matrix kern = RankRevealingDecomposition(bt).kernel();
    if (kern.cols() == 0) return std::nullopt;
    lam = kern * (kern.transpose() * red.bh);
  }
  if (red.bh.dot(lam) < 0) lam = -lam;
  const Vector gvec = red.vr.transpose() * lam;
  double den = 0.0;
  for (const auto& coords : gs.groups) den += block_norm(gvec, coords);
  if (den <= 1e-300) return std::nullopt;
  PatternDual out;
  out.lower = red.bh.dot(lam) / den;
  out.dual_red = lam / den;
  out.theta = Vector(act.size());
  for (size_t j = 0; j < act.size(); ++j) {
    const auto& coords = gs.groups[static_cast<size_t>(act[j])];
    const double nrm = block_norm(z, coords);
    double th = 0.0;
    for (int i : coords) th += (z(i) / nrm) * gvec(i);
    out.theta(static_cast<Eigen::Index>(j)) = th;
  }
  return out;
}

// One exchange move from a vertex pattern: release the named block, walk the
// one-dimensional edge of the relaxed system in the direction that lowers t,
// and stop where the next block norm meets t. Returns the new vertex and its
// pattern. The caller keeps the move only if the value strictly decreases,
// which rules out cycling.
inline std::optional<std::pair<Vector, std::vector<int>>> exchange_step(
    const ReducedConstraints& red, const GroupStructure& gs, const Vector& z,
    const std::vector<int>& act, int leaving) {
  const Eigen::Index d = red.vr.cols();
  const Eigen::Index r = red.vr.rows();
  const double t = dual_group_norm(z, gs);
  if (t <= 0) return std::nullopt;
  std::vector<char> is_act(static_cast<size_t>(gs.count()), 0);
  for (int g : act)
    if (g != leaving) is_act[static_cast<size_t>(g)] = 1;
  std::vector<int> free_coords;
  std::vector<int> free_blocks;
  for (int g = 0; g < gs.count(); ++g) {
    if (is_act[static_cast<size_t>(g)]) continue;
    free_blocks.push_back(g);
    for (int i : gs.groups[static_cast<size_t>(g)]) free_coords.push_back(i);
  }
  Vector tcol = Vector::Zero(d);
  for (int g : act) {
    if (g == leaving) continue;
    const auto& coords = gs.groups[static_cast<size_t>(g)];
    const double nrm = block_norm(z, coords);
    if (nrm <= 0) return std::nullopt;
    for (int i : coords) tcol(i) = z(i) / nrm;
  }
  Matrix c(r, 1 + static_cast<Eigen::Index>(free_coords.size()));
  c.col(0) = red.vr * tcol;
  for (size_t j = 0; j < free_coords.size(); ++j)
    c.col(1 + static_cast<Eigen::Index>(j)) = red.vr.col(free_coords[j]);
  const Matrix kern = RankRevealingDecomposition(c).kernel();
  if (kern.cols() != 1) return std::nullopt;
  Vector w = kern.col(0);
  if (std::abs(w(0)) <= 1e-14) return std::nullopt;
  if (w(0) > 0) w = -w;
  const double dt = w(0);
  std::vector<Eigen::Index> coord_slot(static_cast<size_t>(d), -1);
  for (size_t j = 0; j < free_coords.size(); ++j)
    coord_slot[static_cast<size_t>(free_coords[j])] = 1 + static_cast<Eigen::Index>(j);

  double sstar = -t / dt;  // where t itself reaches zero
  int entering = -1;
  for (int g : free_blocks) {
    const auto& coords = gs.groups[static_cast<size_t>(g)];
    double ww = 0.0, zw = 0.0, zz = 0.0;
    for (int i : coords) {
      const double wi = w(coord_slot[static_cast<size_t>(i)]);
      ww += wi * wi;
      zw += z(i) * wi;
      zz += z(i) * z(i);
    }
    // || z_g + s w_g ||^2 = (t + s dt)^2
    const double qa = ww - dt * dt;
    const double qb = 2.0 * (zw - t * dt);
    const double qc = zz - t * t;
    double root = kInf;
    const double disc = qb * qb - 4.0 * qa * qc;
    if (std::abs(qa) <= 1e-300) {
      if (qb > 0 && qc < 0) root = -qc / qb;
    } else if (disc >= 0) {
      const double sq = std::sqrt(disc);
      const double qq = -0.5 * (qb + (qb >= 0 ? sq : -sq));
      for (double s : {qq / qa, std::abs(qq) > 1e-300 ? qc / qq : kInf})
        if (s > 0 && s < root) root = s;
    }
    if (root < sstar) {
      sstar = root;
      entering = g;
    }
  }
  if (entering < 0 || !(sstar > 0) || !std::isfinite(sstar)) return std::nullopt;

  Vector zn = (t + sstar * dt) * tcol;
  for (size_t j = 0; j < free_coords.size(); ++j)
    zn(free_coords[j]) = z(free_coords[j]) + sstar * w(1 + static_cast<Eigen::Index>(j));
  std::vector<int> pat;
  for (int g : act)
    if (g != leaving) pat.push_back(g);
  pat.push_back(entering);
  return std::make_pair(std::move(zn), std::move(pat));
}

}  // namespace detail

// Primal and stationarity residuals of z for the program. Stationarity is the
// distance from the span of the constraint rows to the subdifferential of the
// max-of-block-norms objective at z (zero iff z is a KKT point).
inline std::pair<double, double> kkt_residuals(const ConeProgram& prog, const Vector& z) {
  prog.validate();
  if (z.size() != prog.a.cols()) throw std::invalid_argument("kkt_residuals: dimension mismatch");
  const double primal = (prog.a * z - prog.b).norm();
  const double v = dual_group_norm(z, prog.groups);
  if (v <= 0.0) return {primal, 0.0};  // subdifferential at 0 contains 0
  if (prog.a.rows() == 0) {
    // unconstrained: stationarity is the norm of the min-norm subgradient
    const std::vector<int> act =
        detail::active_blocks(z, prog.groups, v, std::max(1e-12, 1e-9 * v));
    Matrix gram(static_cast<Eigen::Index>(act.size()), static_cast<Eigen::Index>(act.size()));
    std::vector<Vector> dirs;
    for (int g : act) {
      Vector dir = Vector::Zero(z.size());
      const auto& coords = prog.groups.groups[static_cast<size_t>(g)];
      const double nrm = block_norm(z, coords);
      for (int i : coords) dir(i) = z(i) / nrm;
      dirs.push_back(dir);
    }
    for (size_t i = 0; i < dirs.size(); ++i)
      for (size_t j = 0; j < dirs.size(); ++j)
        gram(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = dirs[i].dot(dirs[j]);
    const Vector theta = detail::simplex_qp(gram);
    return {primal, std::sqrt(std::max(0.0, theta.dot(gram * theta)))};
  }
  RankRevealingDecomposition f(prog.a);
  detail::ReducedConstraints red(f, prog.b);
  const std::vector<int> act =
      detail::active_blocks(z, prog.groups, v, std::max(1e-12, 1e-9 * v));
  const detail::DualBound db = detail::dual_bound(red, prog.groups, z, v, act);
  return {primal, db.stationarity};
}

inline ConeSolution solve_minmax_group_norm(const ConeProgram& prog) {
  prog.validate();
  const Eigen::Index d = prog.a.cols();
  const Eigen::Index rows = prog.a.rows();
  const int q = prog.groups.count();
  const ConeTolerances& tol = prog.tol;
  ConeSolution sol;
  const double bscale = std::max(1.0, prog.b.norm());

  if (rows == 0) {  // unconstrained: zero is optimal
    sol.z = Vector::Zero(d);
    sol.dual = Vector::Zero(0);
    return sol;
  }
  if (d == 0) {
    sol.z = Vector::Zero(0);
    sol.dual = Vector::Zero(rows);
    sol.primal_residual = prog.b.norm();
    if (sol.primal_residual > tol.primal * bscale) {
      sol.status = SolveStatus::infeasible;
      sol.infeasibility = prog.b;
    }
    return sol;
  }

  RankRevealingDecomposition f(prog.a);
  detail::ReducedConstraints red(f, prog.b);
  const Vector resid = prog.b - prog.a * red.z_ls;
  if (resid.norm() > std::max(tol.primal, 1e-9) * bscale) {
    sol.status = SolveStatus::infeasible;
    sol.z = red.z_ls;
    sol.value = dual_group_norm(sol.z, prog.groups);
    sol.primal_residual = resid.norm();
    sol.stationarity_residual = kInf;
    sol.infeasibility = resid;
    sol.dual = resid;  // separating direction: resid' A = 0, resid' b > 0
    return sol;
  }
  if (prog.b.norm() == 0.0) {
    sol.z = Vector::Zero(d);
    sol.dual = Vector::Zero(rows);
    return sol;
  }

  const Eigen::Index kernel_dim = d - f.rank;
  auto finalize = [&](const Vector& z_in, double lb, const Vector& dual_red, int iters,
                      SolveStatus status) {
    const Vector z = red.project_feasible(z_in);  // exact feasibility at machine precision
    sol.z = z;
    sol.value = dual_group_norm(z, prog.groups);
    sol.primal_residual = (prog.a * z - prog.b).norm();
    // Stationarity on the eps-active set, eps tied to the certified gap: the
    // hull of near-max block directions is the subdifferential the iterate is
    // actually converging to.
    const double eps_act = 10.0 * std::max(sol.value - lb, tol.gap) * std::max(1.0, sol.value) +
                           std::max(1e-12, 1e-9 * sol.value);
    const std::vector<int> act = detail::active_blocks(z, prog.groups, sol.value, eps_act);
    const detail::DualBound db = detail::dual_bound(red, prog.groups, z, sol.value, act);
    sol.stationarity_residual = sol.value > 0 ? db.stationarity : 0.0;
    sol.gap = std::max(0.0, sol.value - std::max(lb, db.lower));
    sol.iterations = iters;
    sol.status = status;
    Vector lam = db.dual_red.size() ? db.dual_red : dual_red;
    sol.dual = lam.size() ? red.lift_dual(lam) : Vector::Zero(rows);
    return sol;
  };

  if (kernel_dim == 0) {
    // unique feasible point
    return finalize(red.z_ls, 0.0, Vector(), 0, SolveStatus::optimal);
  }

  // ADMM state: one SOC copy (w_g, s_g) with scaled duals (uu_g, vv_g) per group.
  const double alpha = 1.6;  // over-relaxation
  const int adapt_every = 25;
  const int check_every = 100;
  double sigma = 1.0;
  Vector z = red.z_ls;
  double t = dual_group_norm(z, prog.groups);
  std::vector<Vector> w(static_cast<size_t>(q)), uu(static_cast<size_t>(q));
  std::vector<double> s(static_cast<size_t>(q), t), vv(static_cast<size_t>(q), 0.0);
  for (int g = 0; g < q; ++g) {
    const auto& coords = prog.groups.groups[static_cast<size_t>(g)];
    Vector zg(static_cast<Eigen::Index>(coords.size()));
    for (size_t i = 0; i < coords.size(); ++i) zg(static_cast<Eigen::Index>(i)) = z(coords[i]);
    w[static_cast<size_t>(g)] = zg;
    uu[static_cast<size_t>(g)] = Vector::Zero(zg.size());
  }

  double best_ub = t;
  Vector best_z = z;
  std::vector<int> best_pattern;  // vertex pattern behind best_z when polished
  double best_lb = 0.0;
  Vector best_dual_red;
  int stall = 0;
  Vector wbar(d);

  for (int it = 1; it <= tol.max_iterations; ++it) {
    double tacc = 0.0;
    for (int g = 0; g < q; ++g) {
      const auto& coords = prog.groups.groups[static_cast<size_t>(g)];
      const Vector diff = w[static_cast<size_t>(g)] - uu[static_cast<size_t>(g)];
      for (size_t i = 0; i < coords.size(); ++i) wbar(coords[i]) = diff(static_cast<Eigen::Index>(i));
      tacc += s[static_cast<size_t>(g)] - vv[static_cast<size_t>(g)];
    }
    const Vector znew = red.project_feasible(wbar);
    const double tnew = tacc / q - 1.0 / (sigma * q);

    double rp2 = 0.0, rd2 = 0.0;
    for (int g = 0; g < q; ++g) {
      const auto& coords = prog.groups.groups[static_cast<size_t>(g)];
      Vector zh(static_cast<Eigen::Index>(coords.size()));
      for (size_t i = 0; i < coords.size(); ++i)
        zh(static_cast<Eigen::Index>(i)) = alpha * znew(coords[i]) +
                                           (1.0 - alpha) * w[static_cast<size_t>(g)](static_cast<Eigen::Index>(i));
      const double th = alpha * tnew + (1.0 - alpha) * s[static_cast<size_t>(g)];
      Vector wn = zh + uu[static_cast<size_t>(g)];
      double sn = th + vv[static_cast<size_t>(g)];
      detail::soc_project(wn, sn);
      rd2 += (wn - w[static_cast<size_t>(g)]).squaredNorm() +
             (sn - s[static_cast<size_t>(g)]) * (sn - s[static_cast<size_t>(g)]);
      uu[static_cast<size_t>(g)] += zh - wn;
      vv[static_cast<size_t>(g)] += th - sn;
      for (size_t i = 0; i < coords.size(); ++i) {
        const double r = znew(coords[i]) - wn(static_cast<Eigen::Index>(i));
        rp2 += r * r;
      }
      rp2 += (tnew - sn) * (tnew - sn);
      w[static_cast<size_t>(g)] = wn;
      s[static_cast<size_t>(g)] = sn;
    }
    const double rprim = std::sqrt(rp2), rdual = sigma * std::sqrt(rd2);

    if (it % check_every == 0 || (rprim <= tol.primal && rdual <= tol.primal)) {
      const double ub = dual_group_norm(znew, prog.groups);
      if (ub < best_ub) {
        best_ub = ub;
        best_z = znew;
        best_pattern.clear();
      }
      // Cap the active-set slack: a wide-open slack early on would sweep in
      // every block and make the polish/bound steps quadratic in q.
      const double slack = std::min(10.0 * std::max(best_ub - best_lb, tol.gap),
                                    0.05 * best_ub) +
                           std::max(1e-12, 1e-9 * best_ub);
      // Candidate patterns, block directions, and dual weights all come from
      // the raw iterate; the polished incumbent only stores the best value.
      // Feeding a polished point back in would distort the block-norm ranking
      // whenever a wrong pattern got accepted.
      const Eigen::Index act_cap =
          std::min<Eigen::Index>(q, std::max<Eigen::Index>(2 * (kernel_dim + 16), 64));
      const std::vector<int> act = detail::active_blocks(znew, prog.groups, ub, slack);
      const double prev_ub = best_ub, prev_lb = best_lb;
      if (static_cast<Eigen::Index>(act.size()) <= act_cap) {
        std::vector<int> order(static_cast<size_t>(q));
        for (int g = 0; g < q; ++g) order[static_cast<size_t>(g)] = g;
        std::vector<double> bn(static_cast<size_t>(q));
        for (int g = 0; g < q; ++g)
          bn[static_cast<size_t>(g)] = block_norm(znew, prog.groups.groups[static_cast<size_t>(g)]);
        std::sort(order.begin(), order.end(),
                  [&](int a1, int a2) { return bn[static_cast<size_t>(a1)] > bn[static_cast<size_t>(a2)]; });
        // The least squares in the polish pins t exactly when the pattern
        // covers kernel_dim + 1 coordinates, so take the shortest prefix of
        // the block-norm order that reaches that coverage. A wider pattern
        // overdetermines the system and always fails the feasibility test.
        const auto cover_prefix = [&](const std::vector<int>& ord) {
          int j = 0;
          for (Eigen::Index cover = 0;
               j < static_cast<int>(ord.size()) && cover <= kernel_dim; ++j)
            cover += static_cast<Eigen::Index>(
                prog.groups.groups[static_cast<size_t>(ord[static_cast<size_t>(j)])].size());
          return std::vector<int>(ord.begin(), ord.begin() + j);
        };
        // An improper polish still names the blocks that belong in the
        // pattern: re-rank from the polished point and solve again. Each
        // round swaps the spurious tail blocks for the off-pattern blocks
        // that rose above the pattern level.
        Vector src = znew;
        std::vector<int> pat = cover_prefix(order);
        for (int round = 0; round < 4 && !pat.empty(); ++round) {
          const auto pr = detail::polish_by_pattern(red, prog.groups, src, pat);
          if (!pr) break;
          if (pr->value < best_ub) {
            best_ub = pr->value;
            best_z = pr->z;
            if (pr->proper) {
              best_pattern = pat;
              if (auto dx = detail::dual_by_pattern(red, prog.groups, best_z, pat)) {
                if (dx->lower > best_lb) {
                  best_lb = dx->lower;
                  best_dual_red = dx->dual_red;
                }
              }
            } else {
              best_pattern.clear();
            }
          }
          if (pr->proper) break;
          std::vector<int> reorder(static_cast<size_t>(q));
          for (int g = 0; g < q; ++g) reorder[static_cast<size_t>(g)] = g;
          std::sort(reorder.begin(), reorder.end(), [&](int a1, int a2) {
            return block_norm(pr->z, prog.groups.groups[static_cast<size_t>(a1)]) >
                   block_norm(pr->z, prog.groups.groups[static_cast<size_t>(a2)]);
          });
          std::vector<int> next = cover_prefix(reorder);
          std::vector<int> sp = pat, sn = next;
          std::sort(sp.begin(), sp.end());
          std::sort(sn.begin(), sn.end());
          if (sp == sn) break;
          src = pr->z;
          pat = std::move(next);
        }
        // The bound is valid for any weights and exact on a superset of the
        // true active set, so widen the candidate list when progress stalls.
        int jd = std::max<int>(static_cast<int>(act.size()), static_cast<int>(pat.size()));
        if (stall >= 4) jd = static_cast<int>(act_cap);
        else if (stall >= 2) jd = std::min<int>(static_cast<int>(act_cap), jd + 64);
        std::vector<int> act2 = detail::active_blocks(znew, prog.groups, ub, slack);
        if (static_cast<int>(act2.size()) < jd) act2.assign(order.begin(), order.begin() + jd);
        const detail::DualBound db = detail::dual_bound(red, prog.groups, znew, ub, act2);
        if (db.lower > best_lb) {
          best_lb = db.lower;
          best_dual_red = db.dual_red;
        }
        // When the incumbent is a polished vertex whose pattern dual carries a
        // negative alignment weight, that vertex is identifiably suboptimal:
        // walk exchange steps until the weights turn nonnegative, the value
        // stops improving, or an edge degenerates. Each accepted step strictly
        // lowers the value, and at the optimal pattern the dual certifies it.
        if (stall >= 1 && !best_pattern.empty()) {
          for (int step = 0; step < 12; ++step) {
            const auto pdx = detail::dual_by_pattern(red, prog.groups, best_z, best_pattern);
            if (!pdx) break;
            if (pdx->lower > best_lb) {
              best_lb = pdx->lower;
              best_dual_red = pdx->dual_red;
            }
            Eigen::Index worst = 0;
            if (pdx->theta.size() == 0 || pdx->theta.minCoeff(&worst) >= -1e-12) break;
            const auto ex = detail::exchange_step(red, prog.groups, best_z, best_pattern,
                                                  best_pattern[static_cast<size_t>(worst)]);
            if (!ex) break;
            Vector zn = ex->first;
            double vn = dual_group_norm(zn, prog.groups);
            if (auto zp = detail::polish_by_pattern(red, prog.groups, zn, ex->second)) {
              if (zp->proper && zp->value < vn) {
                vn = zp->value;
                zn = std::move(zp->z);
              }
            }
            if (vn >= best_ub) break;
            best_ub = vn;
            best_z = std::move(zn);
            best_pattern = ex->second;
          }
        }
      }
      if (best_ub - best_lb <= tol.gap * std::max(1.0, best_ub))
        return finalize(best_z, best_lb, best_dual_red, it, SolveStatus::optimal);
      stall = best_ub - best_lb > 0.9 * (prev_ub - prev_lb) ? stall + 1 : 0;
    }
    if (it % adapt_every == 0) {
      if (rprim > 10.0 * rdual) {
        sigma *= 2.0;
        for (auto& u : uu) u /= 2.0;
        for (auto& v : vv) v /= 2.0;
      } else if (rdual > 10.0 * rprim) {
        sigma /= 2.0;
        for (auto& u : uu) u *= 2.0;
        for (auto& v : vv) v *= 2.0;
      }
    }
  }
  return finalize(best_z, best_lb, best_dual_red, tol.max_iterations, SolveStatus::max_iterations);
}

}  // namespace sharpcert
