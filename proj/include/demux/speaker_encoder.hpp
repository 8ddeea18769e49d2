#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "demux/config.hpp"
#include "demux/nn.hpp"
#include "demux/synth.hpp"

namespace demux {

// Frame-wise convolutional encoder producing oracle speaker embeddings:
// three conv -> per-channel time normalization -> ReLU layers, F x T -> D x T,
// the same stage structure as a demultiplexer branch. During pretraining a speaker
// classifier sits on top of its temporal average.
class SpeakerEncoder {
 public:
  SpeakerEncoder(const ModelConfig& config, std::uint64_t seed);
  SpeakerEncoder(const ModelConfig& config, nn::ParameterStore params);

  Tensor encode(const Tensor& source) const;

  // Adds a cosine classifier over num_classes speakers: logits are 10 times
  // the cosine between the pooled embedding and each class vector, so
  // training cannot lower the loss by inflating embedding norms.
  void attach_classifier(std::size_t num_classes, std::uint64_t seed = 1);
  Tensor classify(const Tensor& source, std::span<const std::size_t> frames) const;  // logits, K x 1

  // Drops the classifier and stops gradients into every parameter.
  void freeze();
  bool frozen() const { return frozen_; }

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return params_; }
  const nn::ParameterStore& parameters() const { return params_; }

 private:
  void bind();

  ModelConfig config_;
  nn::ParameterStore params_;
  struct Layer {
    nn::Conv1d conv;
    nn::AffineNorm norm;
  };
  std::vector<Layer> layers_;
  bool frozen_ = false;
};

struct PretrainResult {
  SpeakerEncoder encoder;
  std::vector<Real> step_losses;
  std::vector<int> classes;  // speaker id of each class index
};

// Speaker classification on every present source of the corpus, pooled over
// the speaker's active frames. Returns the frozen encoder.
PretrainResult pretrain_speaker_encoder(const Corpus& corpus, const PretrainConfig& config,
                                        const std::function<void(std::size_t, Real)>& on_step = {});

// Trains a softmax probe on frozen frame embeddings of `train` sources and
// reports frame accuracy on `test` sources. Only speakers seen in train count.
Real linear_probe_accuracy(const SpeakerEncoder& encoder, const Corpus& train, const Corpus& test,
                           std::uint64_t seed = 1, std::size_t epochs = 30);

}  // namespace demux
