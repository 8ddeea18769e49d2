#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "demux/config.hpp"
#include "demux/losses.hpp"
#include "demux/metrics.hpp"
#include "demux/model.hpp"
#include "demux/rttm.hpp"
#include "demux/speaker_encoder.hpp"
#include "demux/synth.hpp"

namespace demux {

// Corpus and model disagree on F or S.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteLossError : public std::runtime_error {
 public:
  NonFiniteLossError(const std::string& what, std::size_t step, std::string sample, LossValues values)
      : std::runtime_error(what), step(step), sample(std::move(sample)), values(values) {}
  std::size_t step;
  std::string sample;
  LossValues values;
};

struct StepRecord {
  std::size_t step = 0;  // optimizer step, from 1
  std::size_t epoch = 0;
  Real lr = 0;
  LossValues values;  // batch means
  Real total = 0;     // batch mean of the weighted total
  std::vector<std::string> permutations;
  std::optional<Real> dev_der;

  nlohmann::json to_json() const;
};

struct TrainResult {
  EendDemux model;  // after the last step
  EendDemux best;   // lowest dev DER; the last model when no dev set is given
  std::vector<StepRecord> log;
  std::optional<Real> best_dev_der;
  std::size_t best_step = 0;
  std::size_t warmup_steps = 0;
};

struct TrainInputs {
  const Corpus* train = nullptr;
  const Corpus* dev = nullptr;
  const SpeakerEncoder* oracle = nullptr;  // without it the distillation term is 0
  const EendDemux* init = nullptr;         // adaptation source
  std::function<void(const StepRecord&)> on_record;
};

// One oracle embedding (D x T) per label column of every sample; columns of
// absent speakers hold an empty tensor.
std::vector<std::vector<Tensor>> oracle_embeddings(const SpeakerEncoder& encoder, const Corpus& corpus);

// Optimizer steps per epoch: ceil(N / (batch_size * grad_accumulation)).
std::size_t steps_per_epoch(std::size_t corpus_size, const TrainConfig& config);
std::size_t warmup_steps(std::size_t corpus_size, const TrainConfig& config);

void check_dimensions(const Corpus& corpus, const ModelConfig& model, const std::string& what);

// Every optimizer step consumes batch_size * grad_accumulation samples,
// each on its own tape with its loss scaled by 1/(samples in the step), so
// accumulation over k micro-batches equals one batch k times larger.
TrainResult train(const TrainConfig& config, const TrainInputs& inputs);

// Copies the base model into the new configuration; S may grow, in which
// case the extra demultiplexer branches are freshly initialized from seed.
EendDemux adapt(const EendDemux& base, const ModelConfig& target, std::uint64_t seed);

EendDemux clone_model(const EendDemux& model);

struct InferResult {
  DiarizationOutput output;
  ActivityMatrix activity;
  SegmentList segments;
};

InferResult infer(const EendDemux& model, const Tensor& features, Real frame_duration, const std::string& recording,
                  Real threshold = 0.5, std::size_t median_window = 1);

// Corpus-level DER of the model's decisions against the labels.
DerReport evaluate(const EendDemux& model, const Corpus& corpus, Real threshold = 0.5, std::size_t median_window = 1);

struct EmbeddingStats {
  Real distance = 0;     // mean L2 distance to the oracle embedding, matched heads
  Real cross_cosine = 0; // mean |cos| between demultiplexed embeddings of different speakers
  Real l1 = 0;           // mean L1 norm of demultiplexed embeddings of valid heads
  Real cardinality_accuracy = 0;  // fraction of samples with |predicted valid set| = true count
};

// Statistics under the posterior-PIT assignment with the ground-truth valid set.
EmbeddingStats embedding_stats(const EendDemux& model, const Corpus& corpus,
                               const std::vector<std::vector<Tensor>>& oracle);

// File-level driver: reads corpora and checkpoints named in the config,
// trains, and writes best.ckpt, last.ckpt, train_log.jsonl and
// config.json into out_dir.
TrainResult run_training(const TrainConfig& config, std::ostream* progress = nullptr);

}  // namespace demux
