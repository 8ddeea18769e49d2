#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "demux/config.hpp"
#include "demux/metrics.hpp"
#include "demux/tensor.hpp"

// Reference implementations used as test oracles. They share no code with
// the library beyond the plain data types.
namespace oracle {

using demux::ad::Real;
using demux::ad::Tensor;

struct FrameCounts {
  std::size_t reference_speech = 0, false_alarm = 0, missed = 0, confusion = 0;
};

// Tries every partial one-to-one mapping of reference to hypothesis speakers,
// keeps the one with the most correctly attributed speaker-frames, and counts
// errors frame by frame.
FrameCounts brute_force_der(const demux::ActivityMatrix& ref, const demux::ActivityMatrix& hyp);

// Minimum of sum_r cost[r][p[r]] over all permutations via std::next_permutation.
Real brute_force_assignment(const std::vector<std::vector<Real>>& cost, std::vector<std::size_t>* best = nullptr);

Tensor random_tensor(demux::ad::Shape shape, std::mt19937_64& rng, Real lo = -1, Real hi = 1);

demux::ActivityMatrix random_activity(std::size_t frames, std::size_t speakers, double p, std::mt19937_64& rng);

// A model small enough for fast tests.
demux::ModelConfig tiny_model(std::size_t speakers = 2, std::size_t feature_dim = 4);

}  // namespace oracle
