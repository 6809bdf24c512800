#pragma once

// Certificates for the candidate x0 of min group_norm(D* x) s.t. Phi x = y0:
// consistency of the source equation, the source coefficient rho and its
// closed-form upper bound tau, restricted injectivity and the restricted gain
// c1, the strong source coefficient zeta with its upper bound gamma, the
// identifiability criterion ic, the sharpness constant, a sampled strong
// curvature estimate, the verdict pipeline, and the recovery error bounds.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sharpcert/cone_solver.hpp"
#include "sharpcert/groups.hpp"
#include "sharpcert/linalg.hpp"
#include "sharpcert/model.hpp"
#include "sharpcert/rng.hpp"

namespace sharpcert {

// One certificate value as it appears in reports: the number, the status of
// the computation that produced it, and the certified gap when a solver was
// involved. Closed-form values carry status "closed-form" and zero gap.
struct CertValue {
  double value = 0.0;
  std::string status = "not-computed";
  double gap = 0.0;

  static CertValue closed_form(double v) { return {v, "closed-form", 0.0}; }
  static CertValue from_solution(const ConeSolution& s) {
    return {s.value, to_string(s.status), s.gap};
  }
};

// Decision gates. Defaults follow the classification pipeline; exact mode
// collapses every gate to its mathematical boundary with a small margin, for
// instances whose ground truth is analytic.
struct Thresholds {
  double tau = 0.99;
  double rho_lo = 0.95;
  double rho_hi = 1.05;
  double gamma = 0.99;
  double zeta = 0.95;

  static Thresholds exact(double eps = 1e-6) {
    return {1.0 - eps, 1.0 - eps, 1.0 + eps, 1.0 - eps, 1.0 - eps};
  }
};

enum class Verdict {
  not_a_solution,
  nonunique_or_undetermined,
  unique_strong_not_sharp,
  sharp,
  borderline,
};

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::not_a_solution: return "not-a-solution";
    case Verdict::nonunique_or_undetermined: return "solution-nonunique-or-undetermined";
    case Verdict::unique_strong_not_sharp: return "unique-strong-not-sharp";
    case Verdict::sharp: return "sharp";
    default: return "borderline";
  }
}

struct CertificateReport {
  bool consistency_ok = false;
  CertValue rho;
  CertValue tau;
  CertValue zeta;
  CertValue gamma;
  CertValue ic;
  bool ri_holds = false;
  double c1 = 0.0;  // restricted gain; +inf when Ker Phi is trivial
  bool sri_holds = false;
  double sharpness_constant_c = 0.0;
  double lipschitz_l = 0.0;
  double phi_pinv_norm = 0.0;
  Verdict verdict = Verdict::borderline;
  Thresholds thresholds;
};

namespace detail {

// Group structure of the inactive blocks over local indices 0..|S|-1, in
// s_coords order. Certificate programs optimize over these coordinates only.
inline GroupStructure inactive_local_groups(const Problem& prob, const ModelDecomposition& dec) {
  std::vector<int> local(static_cast<size_t>(prob.p()), -1);
  for (size_t j = 0; j < dec.s_coords.size(); ++j)
    local[static_cast<size_t>(dec.s_coords[j])] = static_cast<int>(j);
  std::vector<std::vector<int>> gs;
  gs.reserve(dec.inactive.size());
  for (int g : dec.inactive) {
    std::vector<int> cs;
    cs.reserve(prob.groups.groups[static_cast<size_t>(g)].size());
    for (int i : prob.groups.groups[static_cast<size_t>(g)]) cs.push_back(local[static_cast<size_t>(i)]);
    gs.push_back(std::move(cs));
  }
  return GroupStructure(static_cast<int>(dec.s_coords.size()), std::move(gs));
}

}  // namespace detail

// The source program: minimize the dual group norm of v on the inactive
// coordinates subject to R D_S v = -R D e, where the rows of R annihilate
// exactly the image of Phi*. Feasible v extend e to a subgradient whose image
// under D lies in Im Phi*; the optimal value is the source coefficient.
inline ConeProgram source_program(const Problem& prob, const ModelDecomposition& dec,
                                  const Matrix& rows, const ConeTolerances& tol = {}) {
  ConeProgram cp;
  cp.a = rows * d_columns(prob, dec.s_coords);
  cp.b = -(rows * (prob.d * dec.e));
  cp.groups = detail::inactive_local_groups(prob, dec);
  cp.free_coords = dec.s_coords;
  cp.tol = tol;
  return cp;
}

struct OptimalityCheck {
  bool consistency_ok = false;
  ConeSolution rho;
  bool is_optimal = false;
};

// x0 is optimal iff the source equation is consistent and the source
// coefficient is at most one. Consistency is decided by the closed-form
// least-squares test; the solver corroborates it through its own
// infeasibility certificate.
inline OptimalityCheck check_optimality(const Problem& prob, const ModelDecomposition& dec,
                                        const ConeTolerances& tol = {}) {
  const Matrix n_rows = cokernel_rows(prob.phi);
  ConeProgram cp = source_program(prob, dec, n_rows, tol);
  OptimalityCheck out;
  const double bscale = std::max(1.0, cp.b.norm());
  const Vector resid = cp.a * RankRevealingDecomposition(cp.a).pinv_apply(cp.b) - cp.b;
  out.consistency_ok = resid.norm() <= 1e-8 * bscale;
  out.rho = solve_minmax_group_norm(cp);
  if (out.rho.status == SolveStatus::infeasible) out.consistency_ok = false;
  out.is_optimal = out.consistency_ok && out.rho.status == SolveStatus::optimal &&
                   out.rho.value <= 1.0 + 1e-6 + out.rho.gap;
  return out;
}

struct InjectivityCheck {
  bool holds = false;
  double c1 = kInf;  // smallest gain of D*_S on Ker Phi; +inf when the kernel is trivial
};

// Restricted injectivity: Ker Phi meets Ker D*_S only at zero. Decided by the
// smallest singular value of D*_S restricted to an orthonormal kernel basis.
inline InjectivityCheck restricted_injectivity(const Problem& prob, const ModelDecomposition& dec) {
  const Matrix k = kernel_basis(prob.phi);
  InjectivityCheck out;
  if (k.cols() == 0) {
    out.holds = true;
    return out;
  }
  const Matrix ds_t = d_columns(prob, dec.s_coords).transpose();
  out.c1 = restricted_smallest_gain(ds_t, k);
  const double scale = std::max(1.0, RankRevealingDecomposition(ds_t * k).sigma_max());
  out.holds = out.c1 > kTolRank * scale;
  return out;
}

// Closed-form upper bound on the source coefficient: the dual group norm of
// the least-squares solution of the source equation. Tight exactly when the
// least-squares solution is already dual-norm optimal.
inline double tau_upper_bound(const Problem& prob, const ModelDecomposition& dec) {
  const Matrix n_rows = cokernel_rows(prob.phi);
  const ConeProgram cp = source_program(prob, dec, n_rows, ConeTolerances{});
  const Vector v_ls = RankRevealingDecomposition(cp.a).pinv_apply(cp.b);
  return dual_group_norm(v_ls, cp.groups);
}

struct StrongInjectivityCheck {
  bool holds = false;
  Matrix m;           // rows form an orthonormal basis of Ker Phi intersected with E
  double gain = kInf; // smallest gain of D*_S on that intersection
};

// Strong restricted injectivity: the intersection of Ker Phi with the
// E-subspace meets Ker D*_S only at zero. The intersection is the kernel of
// Phi stacked on the E-defining map; its basis doubles as the constraint rows
// of the strong source program.
inline StrongInjectivityCheck strong_restricted_injectivity(const Problem& prob,
                                                            const ModelDecomposition& dec) {
  const Matrix q = dec.active.empty() ? Matrix::Zero(0, prob.n()) : q_matrix(prob, dec);
  Matrix stacked(prob.phi.rows() + q.rows(), prob.n());
  stacked.topRows(prob.phi.rows()) = prob.phi;
  stacked.bottomRows(q.rows()) = q;
  const Matrix basis = kernel_basis(stacked);
  StrongInjectivityCheck out;
  out.m = basis.transpose();
  if (basis.cols() == 0) {
    out.holds = true;
    return out;
  }
  const Matrix ds_t = d_columns(prob, dec.s_coords).transpose();
  out.gain = restricted_smallest_gain(ds_t, basis);
  const double scale = std::max(1.0, RankRevealingDecomposition(ds_t * basis).sigma_max());
  out.holds = out.gain > kTolRank * scale;
  return out;
}

// The strong source coefficient: the source program with the constraint rows
// restricted to Ker Phi intersected with E. Vacuously zero when that
// intersection is trivial.
inline ConeSolution zeta_coefficient(const Problem& prob, const ModelDecomposition& dec,
                                     const Matrix& m, const ConeTolerances& tol = {}) {
  if (m.rows() == 0) {
    ConeSolution s;
    s.z = Vector::Zero(static_cast<Eigen::Index>(dec.s_coords.size()));
    return s;
  }
  return solve_minmax_group_norm(source_program(prob, dec, m, tol));
}

// Closed-form upper bound on the strong source coefficient, by the same
// least-squares argument as tau_upper_bound.
inline double gamma_upper_bound(const Problem& prob, const ModelDecomposition& dec,
                                const Matrix& m) {
  if (m.rows() == 0) return 0.0;
  const ConeProgram cp = source_program(prob, dec, m, ConeTolerances{});
  const Vector v_ls = RankRevealingDecomposition(cp.a).pinv_apply(cp.b);
  return dual_group_norm(v_ls, cp.groups);
}

struct IcCheck {
  bool computable = false;
  ConeSolution value;
};

// The identifiability criterion: the dual group norm of the least-squares
// residual direction, minimized over the kernel of D_S. Computable exactly
// when Phi is injective on Ker D*_S, which is the restricted injectivity
// condition again; smaller than one it certifies sharpness on its own.
inline IcCheck identifiability_criterion(const Problem& prob, const ModelDecomposition& dec,
                                         const ConeTolerances& tol = {}) {
  IcCheck out;
  const Matrix d_s = d_columns(prob, dec.s_coords);
  const Matrix u = kernel_basis(d_s.transpose());
  const Matrix phi_u = prob.phi * u;
  if (u.cols() > 0 && RankRevealingDecomposition(phi_u).rank < u.cols()) return out;
  out.computable = true;

  const Vector de = prob.d * dec.e;
  Vector shifted = -de;
  if (u.cols() > 0)
    shifted += prob.phi.transpose() * (pseudoinverse(phi_u).transpose() * (u.transpose() * de));
  const Vector omega = RankRevealingDecomposition(d_s).pinv_apply(shifted);

  if (dec.s_coords.empty()) return out;
  ConeProgram cp;
  cp.a = d_s;
  cp.b = d_s * omega;
  cp.groups = detail::inactive_local_groups(prob, dec);
  cp.free_coords = dec.s_coords;
  cp.tol = tol;
  out.value = solve_minmax_group_norm(cp);
  return out;
}

// First-order growth constant: positive exactly when the source coefficient
// sits strictly below one and the restricted gain is positive.
inline double sharpness_constant(double rho, double c1) {
  const double slack = std::max(0.0, 1.0 - rho);
  if (slack == 0.0) return 0.0;
  return slack * c1;
}

// Lipschitz modulus of the objective: the group count bridges the group norm
// and the Euclidean norm, the operator norm of D carries the analysis map.
inline double lipschitz_modulus(const Problem& prob) {
  return std::sqrt(static_cast<double>(prob.groups.count())) *
         RankRevealingDecomposition(prob.d).sigma_max();
}

struct KappaEstimate {
  bool available = false;
  double value = 0.0;
  int domain_hits = 0;
  int samples = 0;
};

// Sampled lower proxy for the quadratic growth constant: the smallest second
// subderivative over random unit kernel directions that land in its domain.
// A sampled minimum over the domain, reported with its hit count; directions
// outside the domain carry infinite curvature and are skipped.
inline KappaEstimate estimate_strong_curvature(const Problem& prob, const ModelDecomposition& dec,
                                               int samples = 1000,
                                               std::uint64_t seed = 0x5eed) {
  KappaEstimate out;
  out.samples = samples;
  const Matrix k = kernel_basis(prob.phi);
  if (k.cols() == 0) return out;
  CounterRng rng(seed, 0x6b61/*curvature stream*/);
  double best = kInf;
  for (int i = 0; i < samples; ++i) {
    Vector w = k * rng.normal_vector(static_cast<int>(k.cols()));
    const double nrm = w.norm();
    if (nrm == 0.0) continue;
    w /= nrm;
    const double d2 = second_subderivative(prob, dec, w);
    if (!std::isfinite(d2)) continue;
    ++out.domain_hits;
    best = std::min(best, d2);
  }
  if (out.domain_hits > 0) {
    out.available = true;
    out.value = best;
  }
  return out;
}

// Constructive falsification: walk from x0 along a kernel direction built
// from the source program's dual certificate (or its infeasibility residual)
// until the objective strictly decreases. Returns the witness point.
inline std::optional<Vector> falsification_witness(const Problem& prob,
                                                   const ModelDecomposition& dec,
                                                   const ConeSolution& rho) {
  const Matrix n_rows = cokernel_rows(prob.phi);
  if (n_rows.rows() == 0) return std::nullopt;
  Vector lam;
  if (rho.status == SolveStatus::infeasible && rho.infeasibility.size() > 0) {
    lam = rho.infeasibility;
  } else if (rho.dual.size() > 0) {
    lam = rho.dual;
  } else {
    return std::nullopt;
  }
  Vector w = n_rows.transpose() * lam;
  if (w.norm() == 0.0) return std::nullopt;
  w /= w.norm();
  if (directional_derivative(prob, dec, w) > 0) w = -w;
  const double j0 = prob.objective(prob.x0);
  double t = 1.0;
  for (int i = 0; i < 80; ++i, t *= 0.5) {
    const Vector x = prob.x0 + t * w;
    if (prob.objective(x) < j0 - 1e-9) return x;
  }
  return std::nullopt;
}

struct ClassifyOptions {
  Thresholds thresholds;
  bool exact_mode = false;
  double exact_eps = 1e-6;
  ConeTolerances cone_tol;
  bool compute_ic = true;
};

// The verdict pipeline. Cheap closed forms gate the expensive programs: tau
// can certify sharpness before the source program is consulted for its exact
// value, gamma can certify the strong condition before the strong source
// program runs. Every gate comparison widens by the certified solver gap, and
// a value that straddles a gate yields borderline instead of a silent call.
inline CertificateReport classify(const Problem& prob, const ClassifyOptions& opts = {}) {
  CertificateReport rep;
  rep.thresholds = opts.exact_mode ? Thresholds::exact(opts.exact_eps) : opts.thresholds;
  const Thresholds& th = rep.thresholds;

  const ModelDecomposition dec = model_decomposition(prob);
  rep.lipschitz_l = lipschitz_modulus(prob);
  rep.phi_pinv_norm = [&] {
    const double s = RankRevealingDecomposition(prob.phi).sigma_min_positive();
    return s > 0 ? 1.0 / s : kInf;
  }();

  const InjectivityCheck ri = restricted_injectivity(prob, dec);
  rep.ri_holds = ri.holds;
  rep.sri_holds = ri.holds;  // the strong form restricts the same intersection further
  rep.c1 = ri.c1;

  rep.tau = CertValue::closed_form(tau_upper_bound(prob, dec));

  const OptimalityCheck opt = check_optimality(prob, dec, opts.cone_tol);
  rep.consistency_ok = opt.consistency_ok;
  rep.rho = CertValue::from_solution(opt.rho);
  rep.sharpness_constant_c =
      opt.consistency_ok ? sharpness_constant(opt.rho.value, ri.c1) : 0.0;

  if (opts.compute_ic) {
    const IcCheck ic = identifiability_criterion(prob, dec, opts.cone_tol);
    rep.ic = ic.computable ? CertValue::from_solution(ic.value)
                           : CertValue{0.0, "not-applicable", 0.0};
  }

  if (!opt.consistency_ok) {
    rep.verdict = falsification_witness(prob, dec, opt.rho) ? Verdict::not_a_solution
                                                            : Verdict::borderline;
    return rep;
  }
  if (opt.rho.status == SolveStatus::max_iterations) {
    rep.verdict = Verdict::borderline;
    return rep;
  }

  const double rho_lo_side = opt.rho.value + opt.rho.gap;
  const double rho_hi_side = opt.rho.value - opt.rho.gap;
  if (rep.ri_holds && (rep.tau.value < th.tau || rho_lo_side < th.rho_lo)) {
    rep.verdict = Verdict::sharp;
    return rep;
  }
  if (rho_hi_side >= th.rho_hi) {
    rep.verdict = falsification_witness(prob, dec, opt.rho) ? Verdict::not_a_solution
                                                            : Verdict::borderline;
    return rep;
  }
  if (rho_lo_side >= th.rho_hi) {
    rep.verdict = Verdict::borderline;
    return rep;
  }

  const StrongInjectivityCheck sri = strong_restricted_injectivity(prob, dec);
  rep.sri_holds = rep.ri_holds || sri.holds;
  if (!rep.sri_holds) {
    rep.verdict = Verdict::nonunique_or_undetermined;
    return rep;
  }
  rep.gamma = CertValue::closed_form(gamma_upper_bound(prob, dec, sri.m));
  if (sri.m.rows() == 0) {
    rep.zeta = CertValue::from_solution(zeta_coefficient(prob, dec, sri.m, opts.cone_tol));
    rep.verdict = Verdict::unique_strong_not_sharp;
    return rep;
  }
  if (rep.gamma.value < th.gamma) {
    rep.verdict = Verdict::unique_strong_not_sharp;
    return rep;
  }
  const ConeSolution zs = zeta_coefficient(prob, dec, sri.m, opts.cone_tol);
  rep.zeta = CertValue::from_solution(zs);
  if (zs.status == SolveStatus::optimal && zs.value + zs.gap < th.zeta) {
    rep.verdict = Verdict::unique_strong_not_sharp;
    return rep;
  }
  rep.verdict = Verdict::borderline;
  return rep;
}

struct BoundValue {
  bool applicable = false;
  double value = 0.0;
};

struct RecoveryBoundSet {
  BoundValue est2;  // constrained mode, first-order growth, linear in delta
  BoundValue est;   // penalized mode, first-order growth, linear in delta
  BoundValue est4;  // constrained mode, quadratic growth, square-root rate
  BoundValue est3;  // penalized mode, quadratic growth, square-root rate
};

// Error bounds for recovery at noise level delta. The linear-rate pair needs
// a positive sharpness constant; the square-root pair needs a positive
// quadratic growth constant kappa, and the penalized variant additionally a
// positive discriminant at this delta.
inline RecoveryBoundSet recovery_bounds(const CertificateReport& rep, double delta,
                                        double mu_ratio, double kappa = 0.0) {
  RecoveryBoundSet out;
  const double c = rep.sharpness_constant_c;
  const double l = rep.lipschitz_l;
  const double pn = rep.phi_pinv_norm;
  if (c > 0.0 && std::isfinite(c) && std::isfinite(pn)) {
    out.est2 = {true, 2.0 * (l + c) * pn * delta / c};
    const double inner = 1.0 / mu_ratio + (c + l) * pn;
    out.est = {true, mu_ratio / (2.0 * c) * inner * inner * delta};
  }
  if (kappa > 0.0 && std::isfinite(pn)) {
    out.est4 = {true, 2.0 * std::sqrt(l * pn * delta / kappa + pn * pn * delta * delta)};
    const double disc = 1.0 - mu_ratio * kappa * pn * pn * delta;
    if (disc > 0.0) {
      const double inner = 1.0 / mu_ratio + l * pn;
      out.est3 = {true, std::sqrt(mu_ratio / (disc * kappa)) * inner * std::sqrt(delta)};
    }
  }
  return out;
}

}  // namespace sharpcert
