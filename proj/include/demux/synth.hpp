#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "demux/tensor.hpp"

namespace demux {

using ad::Real;
using ad::Tensor;

struct SpeakerProfile {
  int speaker_id = 0;
  std::vector<Real> mean;  // F
  Real scale = 1;          // per-dimension standard deviation
  Real p_on_to_off = 0.1;
  Real p_off_to_on = 0.1;

  Real stationary_activity() const { return p_off_to_on / (p_on_to_off + p_off_to_on); }
};

// One labelled mixture. Label column s belongs to speaker_ids[s]; unused
// columns (fewer speakers than heads) are all-zero with speaker id -1.
struct MixtureSample {
  std::string id;
  Tensor features;               // F x T, the sum of the active sources
  std::vector<Tensor> sources;   // S entries of F x T, zero where inactive
  Tensor labels;                 // T x S, entries in {0, 1}
  std::vector<int> existence;    // S, 1 iff the label column has activity
  std::vector<int> speaker_ids;  // S

  std::size_t frames() const { return features.extent(1); }
  std::size_t feature_dim() const { return features.extent(0); }
  std::size_t max_speakers() const { return existence.size(); }
  std::size_t num_speakers() const;
};

struct Corpus {
  std::size_t feature_dim = 0;
  std::size_t max_speakers = 0;
  Real frame_duration = 0.01;
  std::uint64_t seed = 0;
  std::vector<SpeakerProfile> speakers;
  std::vector<MixtureSample> samples;

  // Frames with two or more active speakers over frames with any speech.
  Real overlap_ratio() const;
  std::vector<int> speaker_set() const;
};

struct SpeakerPoolConfig {
  std::size_t num_speakers = 20;
  Real separation = 2.0;  // minimum pairwise distance between speaker means
  Real mean_scale = 1.0;
  Real scale_min = 0.5;
  Real scale_max = 1.0;
  Real p_on_to_off_min = 0.05;
  Real p_on_to_off_max = 0.15;
  Real p_off_to_on_min = 0.05;
  Real p_off_to_on_max = 0.15;
};

struct SynthConfig {
  std::size_t num_sequences = 64;
  std::size_t frames = 200;
  std::size_t feature_dim = 16;
  std::size_t max_speakers = 2;                // label columns / model heads
  std::vector<std::size_t> speakers_per_mix{2};  // drawn uniformly per sequence
  SpeakerPoolConfig pool;
  // When set, a sequence is kept only if its realized overlap ratio lies
  // within overlap_tolerance of the target.
  std::optional<Real> overlap_target;
  Real overlap_tolerance = 0.1;
  std::size_t max_attempts = 2000;
  Real frame_duration = 0.01;
  std::uint64_t seed = 1;
};

class SynthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<SpeakerProfile> generate_speaker_pool(std::size_t feature_dim, const SpeakerPoolConfig& config,
                                                  std::uint64_t seed);

// Expected overlap ratio of independent stationary chains.
Real expected_overlap_ratio(const std::vector<SpeakerProfile>& speakers);

Corpus generate_corpus(const SynthConfig& config);
Corpus generate_corpus(const SynthConfig& config, const std::vector<SpeakerProfile>& pool);

// Builds a sample by the additive observation model from explicit per-speaker
// source features and labels; sources are zeroed where the label is 0.
MixtureSample mix_sources(std::string id, const std::vector<Tensor>& sources, const Tensor& labels,
                          std::vector<int> speaker_ids);

struct SplitRatios {
  Real train = 0.8, dev = 0.1, test = 0.1;
};

struct CorpusSplit {
  Corpus train, dev, test;
};

// Seed-deterministic disjoint partition. With hold_out_speakers, any training
// sequence that shares a speaker with the test partition is moved to dev.
CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed,
                         bool hold_out_speakers = false);

}  // namespace demux
