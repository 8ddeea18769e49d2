#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "demux/config.hpp"
#include "demux/nn.hpp"

namespace demux {

using ad::Tensor;

struct EmbeddingBundle {
  Tensor mixture;                // E, D x T
  std::vector<Tensor> demuxed;   // S entries of D x T
  Tensor prototypes;             // D x S, temporal means of demuxed
  Tensor attractors;             // A, D x S
};

struct DiarizationOutput {
  Tensor posteriors;                   // T x S
  Tensor existence;                    // S
  std::vector<std::size_t> valid_set;  // heads with existence >= 0.5
};

struct ForwardResult {
  EmbeddingBundle embeddings;
  DiarizationOutput output;
};

// Mixture encoder -> demultiplexer -> prototype pooling -> attractor decoder,
// with posterior and existence heads. No positional encodings anywhere, so
// the encoder is frame-permutation equivariant and the decoder is
// speaker-permutation equivariant.
class EendDemux {
 public:
  EendDemux(const ModelConfig& config, std::uint64_t seed);
  // Adopts existing parameters (e.g. from a checkpoint); names must match.
  EendDemux(const ModelConfig& config, nn::ParameterStore params);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

  // F x T -> D x T.
  Tensor mixture_encode(const Tensor& features, const nn::Context& ctx = {}) const;
  // D x T -> S branches of D x T, each conv/norm/ReLU stacked.
  std::vector<Tensor> demultiplex(const Tensor& mixture, const nn::Context& ctx = {}) const;
  // Prototypes D x S attend to each other, then to the mixture D x T.
  Tensor attractor_decode(const Tensor& prototypes, const Tensor& mixture, const nn::Context& ctx = {}) const;
  // sigmoid(w^T a_s + b), one shared head; returns shape {S}.
  Tensor existence(const Tensor& attractors) const;

  ForwardResult forward(const Tensor& features, const nn::Context& ctx = {}) const;

  // Grows the demultiplexer to new_speakers branches; new branches are
  // freshly initialized from seed, existing ones are untouched.
  void grow_speakers(std::size_t new_speakers, std::uint64_t seed);

  static std::string branch_prefix(std::size_t speaker);

 private:
  void build(std::uint64_t seed);
  void add_branch(std::size_t speaker, std::mt19937_64& rng);
  void bind();

  struct EncoderBlock {
    nn::AffineNorm norm_attn, norm_ffn;
    nn::MultiHeadAttention attn;
    nn::FeedForward ffn;
  };
  struct DecoderBlock {
    nn::AffineNorm norm_self, norm_cross, norm_ffn;
    nn::MultiHeadAttention self_attn, cross_attn;
    nn::FeedForward ffn;
  };
  struct DemuxStage {
    nn::Conv1d conv;
    nn::AffineNorm norm;
  };

  ModelConfig config_;
  nn::ParameterStore params_;
  nn::Linear input_projection_;
  std::vector<EncoderBlock> encoder_;
  nn::AffineNorm encoder_norm_;
  std::vector<std::vector<DemuxStage>> branches_;
  std::vector<DecoderBlock> decoder_;
  nn::AffineNorm decoder_norm_;
  nn::Linear existence_head_;
};

// Temporal average pooling of each branch: D x S.
Tensor prototypes(std::span<const Tensor> demuxed);
// y[t, s] = sigmoid(demuxed[s][:, t] . attractors[:, s]): T x S.
Tensor posteriors(std::span<const Tensor> demuxed, const Tensor& attractors);
// { s : p[s] >= threshold }.
std::vector<std::size_t> valid_speaker_set(std::span<const ad::Real> p, ad::Real threshold = 0.5);
// D x T x S view of the demultiplexed embeddings.
Tensor stack_demuxed(std::span<const Tensor> demuxed);

}  // namespace demux
