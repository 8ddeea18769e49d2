#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "demux/assignment.hpp"
#include "demux/config.hpp"
#include "demux/model.hpp"
#include "demux/synth.hpp"

namespace demux {

inline constexpr Real kProbClip = 1e-7;
// Norm guard for cosine similarities: |x| is taken as sqrt(|x|^2 + eps^2).
inline constexpr Real kCosineEps = 1e-8;

// Elementwise clamp to [eps, 1 - eps].
Tensor clip_prob(const Tensor& p, Real eps = kProbClip);

// Elementwise H(y, p) = -y log p - (1 - y) log(1 - p) on clipped p.
Tensor binary_cross_entropy(const Tensor& target, const Tensor& prob, Real eps = kProbClip);

// Entry (r, c) sums H over frames between label column valid[r] and
// head valid[c]. Values only; no tape.
CostMatrix bce_cost_matrix(const Tensor& posteriors, const Tensor& labels, std::span<const std::size_t> valid,
                           Real eps = kProbClip);

struct PitResult {
  Tensor loss;                              // scalar
  std::vector<std::size_t> valid;           // label columns, ascending
  std::vector<std::size_t> permutation;     // label valid[r] <-> head valid[permutation[r]]
  CostMatrix cost;
  Real min_total = 0;                       // minimum summed cost

  std::size_t head(std::size_t r) const { return valid[permutation[r]]; }
};

class LossError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Permutation-invariant diarization loss over the valid set, normalized by
// T |valid|. Gradients flow only through the chosen permutation. Passing
// fixed_permutation skips the search (used to hold the assignment fixed).
PitResult loss_diar(const Tensor& posteriors, const Tensor& labels, std::span<const std::size_t> valid,
                    std::optional<std::vector<std::size_t>> fixed_permutation = std::nullopt);

// Mean over all S heads of H(p_s, p_hat_s).
Tensor loss_ext(const Tensor& existence, std::span<const int> labels);

// Mean L2 distance between oracle embeddings (indexed by label column) and
// the demultiplexed embeddings of the matched heads. No gradient reaches
// the oracle.
Tensor loss_dis(std::span<const Tensor> demuxed, std::span<const Tensor> oracle, const PitResult& pit);

// For each frame and label pair r1 < r2 of matched heads h1, h2:
// (1 - cos(e[h1,t], proto[h1])) + |cos(e[h1,t], e[h2,t])|, normalized by
// T * C(n, 2). Zero when fewer than two speakers are valid.
Tensor loss_ort(std::span<const Tensor> demuxed, const Tensor& prototypes, const PitResult& pit);

// Mean L1 norm of the demultiplexed embeddings of the valid heads.
Tensor loss_spa(std::span<const Tensor> demuxed, std::span<const std::size_t> valid);

struct LossValues {
  Real diar = 0, ext = 0, dis = 0, ort = 0, spa = 0;
};

Real weighted_total(const LossValues& values, const LossWeights& weights);

struct LossBreakdown {
  Tensor total;  // scalar on the tape
  LossValues values;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> permutation;
  bool has_speakers = false;
};

// Weighted sum of all five objectives for one sample with the valid set
// taken from ground-truth existence. Components with zero weight are still
// evaluated for reporting but stay out of the total. Samples without
// speakers contribute only the existence term.
// `oracle` holds one D x T oracle embedding per label column (entries for
// absent speakers are ignored); when empty the distillation term is 0.
LossBreakdown loss_total(const ForwardResult& forward, const MixtureSample& sample, std::span<const Tensor> oracle,
                         const LossWeights& weights,
                         std::optional<std::vector<std::size_t>> fixed_permutation = std::nullopt);

std::string permutation_string(std::span<const std::size_t> permutation);

}  // namespace demux
