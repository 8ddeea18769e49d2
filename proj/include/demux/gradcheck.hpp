#pragma once

#include <functional>
#include <string>
#include <vector>

#include "demux/tensor.hpp"

namespace demux::ad {

struct GradCheckReport {
  std::vector<Real> analytic;
  std::vector<Real> numeric;
  Real max_rel_error = 0;
  std::size_t worst_index = 0;
  Real tolerance = 0;
  bool passed = false;


  std::string summary() const;
};

// Compares the taped gradient of f at x against central differences.
// Per-element error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
// the floor keeps elements whose true gradient is ~0 from dominating.
// f must build its graph from x; x is restored after every probe.
GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                  Real eps = 1e-5, Real tol = 1e-4, Real floor = 1e-5);

}  // namespace demux::ad
