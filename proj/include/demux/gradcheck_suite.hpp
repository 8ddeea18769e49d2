#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "demux/gradcheck.hpp"

namespace demux {

struct GradCheckCase {
  std::string name;
  ad::GradCheckReport report;
  ad::Real kink_margin = 0;  // closest approach of a non-smooth op's input to its kink
  std::size_t redraws = 0;   // instances discarded for lying too close to a kink
};

// Named components: ops (matmul, softmax, log_softmax, layer_norm, conv1d,
// cosine, attention), the five losses (loss_diar, loss_ext, loss_dis,
// loss_ort, loss_spa) and loss_total, which checks the weighted objective of
// a small model against every parameter tensor. Inputs are random with
// D <= 8, T <= 6, S <= 3; the speaker encoder stays frozen and the PIT
// assignment is held at its unperturbed value. An instance where some input
// of a ReLU, |x| or clamp lies within 1e-4 of its kink, close enough for a
// probe to cross it, is redrawn (up to 25 times).
std::vector<std::string> gradcheck_components();

// "all" runs every component.
std::vector<GradCheckCase> run_gradcheck(const std::string& component, std::uint64_t seed = 1, ad::Real eps = 1e-5,
                                         ad::Real tol = 1e-4);

}  // namespace demux
