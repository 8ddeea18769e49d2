#include "demux/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace demux {
namespace {

void validate(const CostMatrix& cost) {
  if (cost.size() == 0) throw AssignmentError("assignment: empty cost matrix");
  for (Real v : cost.values()) {
    if (!std::isfinite(v)) throw AssignmentError("assignment: non-finite cost");
  }
}

}  // namespace

CostMatrix::CostMatrix(std::size_t n, std::vector<Real> values) : n_(n), cost_(std::move(values)) {
  if (cost_.size() != n * n) {
    throw AssignmentError("cost matrix: expected " + std::to_string(n * n) + " values, got " +
                          std::to_string(cost_.size()));
  }
}

Real assignment_cost(const CostMatrix& cost, std::span<const std::size_t> permutation) {
  std::vector<bool> seen(cost.size(), false);
  if (permutation.size() != cost.size()) throw AssignmentError("assignment: permutation length does not match the matrix");
  for (auto c : permutation) {
    if (c >= cost.size() || seen[c]) throw AssignmentError("assignment: not a permutation");
    seen[c] = true;
  }
  Real total = 0;
  for (std::size_t r = 0; r < permutation.size(); ++r) total += cost(r, permutation[r]);
  return total;
}

Assignment assign_exhaustive(const CostMatrix& cost) {
  validate(cost);
  std::vector<std::size_t> perm(cost.size());
  std::iota(perm.begin(), perm.end(), 0);
  Assignment best{perm, assignment_cost(cost, perm)};
  while (std::next_permutation(perm.begin(), perm.end())) {
    const Real total = assignment_cost(cost, perm);
    if (total < best.total) best = {perm, total};
  }
  return best;
}

Assignment assign_hungarian(const CostMatrix& cost) {
  validate(cost);
  const std::size_t n = cost.size();
  constexpr Real inf = std::numeric_limits<Real>::infinity();
  // 1-based arrays; column 0 is the virtual source.
  std::vector<Real> u(n + 1, 0), v(n + 1, 0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    match[0] = row;
    std::size_t col0 = 0;
    std::vector<Real> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[col0] = true;
      const std::size_t r0 = match[col0];
      Real delta = inf;
      std::size_t col1 = 0;
      for (std::size_t c = 1; c <= n; ++c) {
        if (used[c]) continue;
        const Real reduced = cost(r0 - 1, c - 1) - u[r0] - v[c];
        if (reduced < minv[c]) {
          minv[c] = reduced;
          way[c] = col0;
        }
        if (minv[c] < delta) {
          delta = minv[c];
          col1 = c;
        }
      }
      for (std::size_t c = 0; c <= n; ++c) {
        if (used[c]) {
          u[match[c]] += delta;
          v[c] -= delta;
        } else {
          minv[c] -= delta;
        }
      }
      col0 = col1;
    } while (match[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      match[col0] = match[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  Assignment result;
  result.permutation.assign(n, 0);
  for (std::size_t c = 1; c <= n; ++c) result.permutation[match[c] - 1] = c - 1;
  result.total = assignment_cost(cost, result.permutation);
  return result;
}

Assignment assign_min(const CostMatrix& cost) {
  return cost.size() <= 4 ? assign_exhaustive(cost) : assign_hungarian(cost);
}

}  // namespace demux
