#pragma once

// Problem data and its first-order model at the candidate point: active and
// inactive groups, the model vector e, the T/S coordinate split, the
// E-subspace basis, and the directional / second-order difference calculus
// for J(x) = group_norm(D* x).

#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sharpcert/groups.hpp"
#include "sharpcert/linalg.hpp"

namespace sharpcert {

inline constexpr double kTolBoundary = 1e-8;  // tolerance for boundary / domain equalities

// min J(x) s.t. Phi x = y0, with J = group_norm of D* x. D is stored
// materialized; d_identity records the analysis-free case (D = I, p = n).
struct Problem {
  Matrix phi;       // m x n
  Matrix d;         // n x p
  bool d_identity = false;
  GroupStructure groups;  // over p coordinates
  Vector x0;        // length n
  Vector y0;        // = phi * x0

  Problem() = default;
  Problem(Matrix phi_, Matrix d_, GroupStructure groups_, Vector x0_)
      : phi(std::move(phi_)), d(std::move(d_)), groups(std::move(groups_)), x0(std::move(x0_)) {
    validate();
    y0 = phi * x0;
  }

  static Problem with_identity_d(Matrix phi_, GroupStructure groups_, Vector x0_) {
    const Eigen::Index n = phi_.cols();
    Problem p(std::move(phi_), Matrix::Identity(n, n), std::move(groups_), std::move(x0_));
    p.d_identity = true;
    return p;
  }

  int m() const { return static_cast<int>(phi.rows()); }
  int n() const { return static_cast<int>(phi.cols()); }
  int p() const { return static_cast<int>(d.cols()); }

  Vector dstar(const Vector& x) const { return d.transpose() * x; }

  double objective(const Vector& x) const { return group_norm(dstar(x), groups); }

  void validate() const {
    require_finite(phi, "Problem.phi");
    require_finite(d, "Problem.d");
    if (!x0.allFinite()) throw std::invalid_argument("Problem.x0: non-finite entries");
    if (d.rows() != phi.cols()) throw std::invalid_argument("Problem: D rows must equal n");
    if (groups.p != d.cols()) throw std::invalid_argument("Problem: groups must cover p");
    if (x0.size() != phi.cols()) throw std::invalid_argument("Problem: x0 length must equal n");
    groups.validate();
  }
};

// Active/inactive split of D* x0 and everything derived from it. T is the
// span of the active-group coordinates, S its orthogonal complement (the
// inactive coordinates); e is the block-normalized active part. The
// E-subspace collects directions w whose active blocks of D* w stay parallel
// to the corresponding blocks of D* x0; it is the kernel of q_matrix.
struct ModelDecomposition {
  std::vector<int> active;    // group indices g with ||(D* x0)_g|| > tol_active
  std::vector<int> inactive;  // complement
  std::vector<int> t_coords;  // coordinates of active groups (T)
  std::vector<int> s_coords;  // coordinates of inactive groups (S)
  Vector u0;                  // D* x0
  Vector e;                   // model vector, unit per active block, zero on S
  Matrix s_blk;               // p x |active|, column g = u0 on group g
  Matrix e_basis;             // n x dim E, orthonormal columns spanning E
  double tol_active = 0.0;

  bool is_active_group(int g) const {
    return std::find(active.begin(), active.end(), g) != active.end();
  }
};

// Q maps w to the per-active-block rejection of (D* w)_g from u0_g, scaled by
// ||u0_g||^2; its kernel is the E-subspace. Rows on inactive coordinates are
// zero. For singleton groups every block rejection vanishes and Q = 0.
inline Matrix q_matrix(const Problem& prob, const ModelDecomposition& dec) {
  const int p = prob.p();
  const int n = prob.n();
  Matrix q = Matrix::Zero(p, n);
  Matrix dt = prob.d.transpose();  // p x n
  for (int g : dec.active) {
    const auto& coords = prob.groups.groups[g];
    double nrm2 = 0.0;
    for (int i : coords) nrm2 += dec.u0(i) * dec.u0(i);
    // inner(u0_g, (D* w)_g) row combination
    Eigen::RowVectorXd proj = Eigen::RowVectorXd::Zero(n);
    for (int i : coords) proj += dec.u0(i) * dt.row(i);
    for (int i : coords) q.row(i) = nrm2 * dt.row(i) - dec.u0(i) * proj;
  }
  return q;
}

inline ModelDecomposition model_decomposition(const Problem& prob, double tol_active = -1.0) {
  ModelDecomposition dec;
  dec.u0 = prob.dstar(prob.x0);
  double max_norm = 0.0;
  std::vector<double> norms(prob.groups.count());
  for (int g = 0; g < prob.groups.count(); ++g) {
    norms[g] = block_norm(dec.u0, prob.groups.groups[g]);
    max_norm = std::max(max_norm, norms[g]);
  }
  if (tol_active < 0) tol_active = std::max(1e-9 * max_norm, 1e-12);
  dec.tol_active = tol_active;

  dec.e = Vector::Zero(prob.p());
  for (int g = 0; g < prob.groups.count(); ++g) {
    const auto& coords = prob.groups.groups[g];
    if (norms[g] > tol_active) {
      dec.active.push_back(g);
      for (int i : coords) {
        dec.t_coords.push_back(i);
        dec.e(i) = dec.u0(i) / norms[g];
      }
    } else {
      dec.inactive.push_back(g);
      for (int i : coords) dec.s_coords.push_back(i);
    }
  }
  std::sort(dec.t_coords.begin(), dec.t_coords.end());
  std::sort(dec.s_coords.begin(), dec.s_coords.end());

  dec.s_blk = Matrix::Zero(prob.p(), static_cast<Eigen::Index>(dec.active.size()));
  for (size_t j = 0; j < dec.active.size(); ++j)
    for (int i : prob.groups.groups[dec.active[j]]) dec.s_blk(i, static_cast<Eigen::Index>(j)) = dec.u0(i);

  if (dec.active.empty()) {
    dec.e_basis = Matrix::Identity(prob.n(), prob.n());
  } else {
    dec.e_basis = kernel_basis(q_matrix(prob, dec));
  }
  return dec;
}

// Columns of D indexed by a coordinate subset (D restricted to T or S).
inline Matrix d_columns(const Problem& prob, const std::vector<int>& coords) {
  Matrix out(prob.n(), static_cast<Eigen::Index>(coords.size()));
  for (size_t j = 0; j < coords.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = prob.d.col(coords[j]);
  return out;
}

// v is a subgradient of the group norm at D* x0 iff it matches e on active
// blocks and has block norm <= 1 on inactive blocks.
inline bool subdifferential_member(const Vector& v, const Problem& prob,
                                   const ModelDecomposition& dec, double tol) {
  if (v.size() != prob.p()) throw std::invalid_argument("subdifferential_member: dimension mismatch");
  for (int g : dec.active) {
    double diff2 = 0.0;
    for (int i : prob.groups.groups[g]) {
      const double di = v(i) - dec.e(i);
      diff2 += di * di;
    }
    if (std::sqrt(diff2) > tol) return false;
  }
  for (int g : dec.inactive)
    if (block_norm(v, prob.groups.groups[g]) > 1.0 + tol) return false;
  return true;
}

// dJ(x0)(w) = <e, D* w> + sum over inactive groups of ||(D* w)_g||.
inline double directional_derivative(const Problem& prob, const ModelDecomposition& dec,
                                     const Vector& w) {
  if (w.size() != prob.n()) throw std::invalid_argument("directional_derivative: dimension mismatch");
  const Vector dw = prob.dstar(w);
  double val = dec.e.dot(dw);
  for (int g : dec.inactive) val += block_norm(dw, prob.groups.groups[g]);
  return val;
}

// Second-order difference quotient of J at x0 along w. Finite only on the
// domain {w in Ker Phi : dJ(x0)(w) = 0}; there it equals the block curvature
// sum over active groups. Outside the domain returns +inf.
inline double second_subderivative(const Problem& prob, const ModelDecomposition& dec,
                                   const Vector& w, double tol_dom = kTolBoundary) {
  if (w.size() != prob.n()) throw std::invalid_argument("second_subderivative: dimension mismatch");
  const double scale = 1.0 + w.norm();
  if ((prob.phi * w).norm() > tol_dom * scale) return kInf;
  if (std::abs(directional_derivative(prob, dec, w)) > tol_dom * scale) return kInf;
  const Vector dw = prob.dstar(w);
  double val = 0.0;
  for (int g : dec.active) {
    const auto& coords = prob.groups.groups[g];
    double u2 = 0.0, w2 = 0.0, uw = 0.0;
    for (int i : coords) {
      u2 += dec.u0(i) * dec.u0(i);
      w2 += dw(i) * dw(i);
      uw += dec.u0(i) * dw(i);
    }
    val += (w2 * u2 - uw * uw) / (u2 * std::sqrt(u2));
  }
  return val;
}

// Distance from w to the span of an orthonormal column basis.
inline double distance_to_span(const Vector& w, const Matrix& basis) {
  if (basis.cols() == 0) return w.norm();
  return (w - basis * (basis.transpose() * w)).norm();
}

// w belongs to the descent cone iff J strictly decreases along w, or w sits
// on the critical boundary and inside the E-subspace.
inline bool descent_cone_member(const Problem& prob, const ModelDecomposition& dec,
                                const Vector& w, double tol = kTolBoundary) {
  const double dd = directional_derivative(prob, dec, w);
  if (dd < -tol) return true;
  if (std::abs(dd) <= tol) return distance_to_span(w, dec.e_basis) <= tol * (1.0 + w.norm());
  return false;
}

}  // namespace sharpcert
