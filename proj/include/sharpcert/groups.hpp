#pragma once

// Group structure over R^p and the l1/l2 group calculus: primal and dual
// norms, the block soft-threshold proximal map, and the closed-form 2x2
// nuclear norm used as an analytic regression target.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sharpcert/linalg.hpp"

namespace sharpcert {

// Partition of {0..p-1} into non-empty, duplicate-free index groups.
struct GroupStructure {
  int p = 0;
  std::vector<std::vector<int>> groups;

  GroupStructure() = default;
  GroupStructure(int dim, std::vector<std::vector<int>> g) : p(dim), groups(std::move(g)) {
    validate();
  }

  // One group of size 1 per coordinate.
  static GroupStructure singletons(int dim) {
    std::vector<std::vector<int>> g(dim);
    for (int i = 0; i < dim; ++i) g[i] = {i};
    return GroupStructure(dim, std::move(g));
  }

  // q consecutive groups of equal size.
  static GroupStructure contiguous(int q, int size) {
    std::vector<std::vector<int>> g(q);
    for (int j = 0; j < q; ++j) {
      g[j].resize(size);
      for (int i = 0; i < size; ++i) g[j][i] = j * size + i;
    }
    return GroupStructure(q * size, std::move(g));
  }

  int count() const { return static_cast<int>(groups.size()); }

  void validate() const {
    std::vector<char> seen(p, 0);
    int total = 0;
    for (const auto& g : groups) {
      if (g.empty()) throw std::invalid_argument("group structure: empty group");
      for (int i : g) {
        if (i < 0 || i >= p) throw std::invalid_argument("group structure: index out of range");
        if (seen[i]) throw std::invalid_argument("group structure: duplicate index");
        seen[i] = 1;
        ++total;
      }
    }
    if (total != p) throw std::invalid_argument("group structure: not a partition");
  }
};

inline double block_norm(const Vector& u, const std::vector<int>& g) {
  double s = 0.0;
  for (int i : g) s += u(i) * u(i);
  return std::sqrt(s);
}

// l1/l2 norm: sum of per-group Euclidean norms.
inline double group_norm(const Vector& u, const GroupStructure& gs) {
  if (u.size() != gs.p) throw std::invalid_argument("group_norm: dimension mismatch");
  double s = 0.0;
  for (const auto& g : gs.groups) s += block_norm(u, g);
  return s;
}

// linf/l2 norm, the dual of group_norm: max of per-group Euclidean norms.
inline double dual_group_norm(const Vector& u, const GroupStructure& gs) {
  if (u.size() != gs.p) throw std::invalid_argument("dual_group_norm: dimension mismatch");
  double s = 0.0;
  for (const auto& g : gs.groups) s = std::max(s, block_norm(u, g));
  return s;
}

// Proximal map of lambda * group_norm: per group, shrink the block norm by
// lambda and keep the direction, zeroing blocks at or below the threshold.
inline Vector block_soft_threshold(const Vector& u, double lambda, const GroupStructure& gs) {
  if (u.size() != gs.p) throw std::invalid_argument("block_soft_threshold: dimension mismatch");
  if (lambda < 0) throw std::invalid_argument("block_soft_threshold: lambda must be >= 0");
  Vector out = Vector::Zero(u.size());
  for (const auto& g : gs.groups) {
    const double nrm = block_norm(u, g);
    if (nrm > lambda) {
      const double scale = 1.0 - lambda / nrm;
      for (int i : g) out(i) = scale * u(i);
    }
  }
  return out;
}

// Nuclear norm of a 2x2 matrix: sigma_1 + sigma_2 = sqrt(||X||_F^2 + 2|det X|).
inline double nuclear_norm_2x2(const Matrix& x) {
  if (x.rows() != 2 || x.cols() != 2)
    throw std::invalid_argument("nuclear_norm_2x2: matrix must be 2x2");
  const double fro2 = x.squaredNorm();
  const double det = x(0, 0) * x(1, 1) - x(0, 1) * x(1, 0);
  return std::sqrt(fro2 + 2.0 * std::abs(det));
}

}  // namespace sharpcert
