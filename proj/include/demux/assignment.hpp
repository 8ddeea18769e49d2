#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "demux/tensor.hpp"

namespace demux {

using ad::Real;

// Square cost matrix, row-major.
class CostMatrix {
 public:
  CostMatrix() = default;
  explicit CostMatrix(std::size_t n, Real fill = 0) : n_(n), cost_(n * n, fill) {}
  CostMatrix(std::size_t n, std::vector<Real> values);

  std::size_t size() const { return n_; }
  Real& operator()(std::size_t row, std::size_t col) { return cost_[row * n_ + col]; }
  Real operator()(std::size_t row, std::size_t col) const { return cost_[row * n_ + col]; }
  std::span<const Real> values() const { return cost_; }

 private:
  std::size_t n_ = 0;
  std::vector<Real> cost_;
};

struct Assignment {
  std::vector<std::size_t> permutation;  // row r is matched to column permutation[r]
  Real total = 0;                        // summed in row order
};

class AssignmentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Enumerates all n! permutations in lexicographic order and keeps the first
// minimum, so ties resolve to the lexicographically smallest permutation.
Assignment assign_exhaustive(const CostMatrix& cost);

// O(n^3) shortest augmenting path method with row/column potentials.
Assignment assign_hungarian(const CostMatrix& cost);

// Exhaustive search for n <= 4, Hungarian above.
Assignment assign_min(const CostMatrix& cost);

Real assignment_cost(const CostMatrix& cost, std::span<const std::size_t> permutation);

}  // namespace demux
