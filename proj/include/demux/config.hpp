#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "demux/synth.hpp"
#include "demux/tensor.hpp"

namespace demux {

using ad::Real;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  std::size_t feature_dim = 16;     // F
  std::size_t embed_dim = 32;       // D
  std::size_t max_speakers = 2;     // S, number of output heads
  std::size_t encoder_blocks = 2;
  std::size_t decoder_blocks = 2;
  std::size_t attention_heads = 4;
  std::size_t ffn_dim = 64;
  std::size_t demux_cnn_stacks = 2;
  std::size_t demux_kernel_size = 5;
  std::size_t speaker_encoder_kernel = 3;
  Real dropout = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LossWeights {
  Real diar = 1;
  Real ext = 1e-2;
  Real dis = 2.5;
  Real ort = 1e-3;
  Real spa = 1e-5;

  void validate() const;  // all weights nonnegative
  bool operator==(const LossWeights&) const = default;
};

struct TrainConfig {
  std::string train_corpus;
  std::string dev_corpus;
  std::string speaker_encoder;  // checkpoint of the frozen oracle encoder
  std::string init_checkpoint;  // adaptation source, optional
  std::string out_dir = "run";
  ModelConfig model;
  LossWeights weights;
  std::size_t batch_size = 8;
  std::size_t grad_accumulation = 1;
  Real peak_lr = 2e-3;
  Real warmup_epochs = 10;
  std::size_t epochs = 250;
  std::size_t max_steps = 0;  // 0: bounded by epochs only
  std::size_t eval_every = 100;
  Real decision_threshold = 0.5;
  std::size_t median_window = 1;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PretrainConfig {
  std::string corpus;
  std::string out = "speaker_encoder.ckpt";
  ModelConfig model;
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  Real lr = 3e-3;
  std::uint64_t seed = 1;
};

// Corpus generation plus the train/dev/test split written under `out`.
struct SynthJob {
  SynthConfig synth;
  SplitRatios split;
  bool hold_out_speakers = false;
  std::string out = "corpus";
};

// Named hyperparameter presets. "desk" is the laptop-scale default;
// "full" uses F=80, D=256, 4 encoder and 2 decoder blocks with 4 heads,
// peak lr 5e-4 with 30 warmup epochs, batch 64 accumulated over 2.
ModelConfig model_preset(const std::string& name);
TrainConfig train_preset(const std::string& name);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const PretrainConfig& c);
void from_json(const nlohmann::json& j, PretrainConfig& c);
void to_json(nlohmann::json& j, const SynthJob& c);
void from_json(const nlohmann::json& j, SynthJob& c);

}  // namespace demux
