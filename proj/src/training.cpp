#include "demux/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "demux/checkpoint.hpp"
#include "demux/corpus_io.hpp"
#include "demux/optim.hpp"

namespace demux {

using namespace demux::ad;

namespace {

std::string dims(const ModelConfig& m) {
  return "F=" + std::to_string(m.feature_dim) + ", S=" + std::to_string(m.max_speakers);
}

std::string describe(const LossValues& v) {
  std::ostringstream os;
  os << "diar=" << v.diar << " ext=" << v.ext << " dis=" << v.dis << " ort=" << v.ort << " spa=" << v.spa;
  return os.str();
}

bool finite(const LossValues& v) {
  return std::isfinite(v.diar) && std::isfinite(v.ext) && std::isfinite(v.dis) && std::isfinite(v.ort) &&
         std::isfinite(v.spa);
}

void add_into(LossValues& acc, const LossValues& v, Real w) {
  acc.diar += w * v.diar;
  acc.ext += w * v.ext;
  acc.dis += w * v.dis;
  acc.ort += w * v.ort;
  acc.spa += w * v.spa;
}

}  // namespace

nlohmann::json StepRecord::to_json() const {
  nlohmann::json j = {{"step", step},
                      {"epoch", epoch},
                      {"lr", lr},
                      {"loss",
                       {{"diar", values.diar},
                        {"ext", values.ext},
                        {"dis", values.dis},
                        {"ort", values.ort},
                        {"spa", values.spa}}},
                      {"total", total},
                      {"permutations", permutations}};
  if (dev_der) j["dev_der"] = *dev_der;
  return j;
}

std::vector<std::vector<Tensor>> oracle_embeddings(const SpeakerEncoder& encoder, const Corpus& corpus) {
  std::vector<std::vector<Tensor>> out;
  out.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) {
    std::vector<Tensor> per(s.max_speakers());
    for (std::size_t k = 0; k < s.max_speakers(); ++k)
      if (s.existence[k]) per[k] = encoder.encode(s.sources[k]).detach();
    out.push_back(std::move(per));
  }
  return out;
}

std::size_t steps_per_epoch(std::size_t corpus_size, const TrainConfig& config) {
  const std::size_t per_step = config.batch_size * config.grad_accumulation;
  return (corpus_size + per_step - 1) / per_step;
}

std::size_t warmup_steps(std::size_t corpus_size, const TrainConfig& config) {
  const Real steps = std::ceil(config.warmup_epochs * static_cast<Real>(steps_per_epoch(corpus_size, config)));
  return std::max<std::size_t>(1, static_cast<std::size_t>(steps));
}

void check_dimensions(const Corpus& corpus, const ModelConfig& model, const std::string& what) {
  if (corpus.feature_dim != model.feature_dim || corpus.max_speakers != model.max_speakers) {
    throw DimensionError(what + " corpus has F=" + std::to_string(corpus.feature_dim) + ", S=" +
                         std::to_string(corpus.max_speakers) + " but the model has " + dims(model));
  }
}

EendDemux clone_model(const EendDemux& model) {
  nn::ParameterStore store;
  for (const auto& [name, t] : model.parameters().all()) {
    Tensor copy = store.create_constant(name, t.shape(), 0);
    std::copy(t.data().begin(), t.data().end(), copy.mutable_data().begin());
    copy.set_requires_grad(t.requires_grad());
  }
  return EendDemux(model.config(), std::move(store));
}

EendDemux adapt(const EendDemux& base, const ModelConfig& target, std::uint64_t seed) {
  ModelConfig same = target;
  same.max_speakers = base.config().max_speakers;
  if (!(same == base.config())) {
    throw DimensionError("adapt: base model (" + nlohmann::json(base.config()).dump() +
                         ") is incompatible with target (" + nlohmann::json(target).dump() + ")");
  }
  if (target.max_speakers < base.config().max_speakers) {
    throw DimensionError("adapt: cannot shrink from S=" + std::to_string(base.config().max_speakers) + " to S=" +
                         std::to_string(target.max_speakers));
  }
  EendDemux model = clone_model(base);
  model.grow_speakers(target.max_speakers, seed);
  return model;
}

TrainResult train(const TrainConfig& config, const TrainInputs& inputs) {
  config.validate();
  if (!inputs.train || inputs.train->samples.empty()) throw ConfigError("train: empty training corpus");
  const Corpus& corpus = *inputs.train;
  check_dimensions(corpus, config.model, "training");
  if (inputs.dev) check_dimensions(*inputs.dev, config.model, "dev");

  EendDemux model = inputs.init ? adapt(*inputs.init, config.model, config.seed) : EendDemux(config.model, config.seed);

  std::vector<std::vector<Tensor>> oracle;
  if (inputs.oracle) {
    const ModelConfig& enc = inputs.oracle->config();
    if (enc.embed_dim != config.model.embed_dim || enc.feature_dim != config.model.feature_dim) {
      throw DimensionError("speaker encoder maps F=" + std::to_string(enc.feature_dim) + " to D=" +
                           std::to_string(enc.embed_dim) + " but the model has F=" +
                           std::to_string(config.model.feature_dim) + ", D=" + std::to_string(config.model.embed_dim));
    }
    oracle = oracle_embeddings(*inputs.oracle, corpus);
  }

  const std::size_t n = corpus.samples.size();
  const std::size_t per_step = config.batch_size * config.grad_accumulation;
  const std::size_t warm = warmup_steps(n, config);
  std::size_t total_steps = config.epochs * steps_per_epoch(n, config);
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  std::mt19937_64 order_rng(config.seed ^ 0x5eedULL);
  std::mt19937_64 dropout_rng(config.seed ^ 0xd60bULL);
  const nn::Context ctx{true, &dropout_rng};
  Adam adam;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  std::vector<StepRecord> log;
  std::optional<EendDemux> best;
  std::optional<Real> best_der;
  std::size_t best_step = 0;
  std::size_t step = 0;
  for (std::size_t epoch = 0; step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng);
    for (std::size_t begin = 0; begin < n && step < total_steps; begin += per_step) {
      const std::size_t end = std::min(n, begin + per_step);
      const Real inv = Real{1} / static_cast<Real>(end - begin);
      ++step;
      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.lr = noam_lr(step, warm, config.peak_lr);
      model.parameters().zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const std::size_t idx = order[i];
        const MixtureSample& sample = corpus.samples[idx];
        Tape tape;
        const ForwardResult fr = model.forward(sample.features, ctx);
        const std::span<const Tensor> target = oracle.empty() ? std::span<const Tensor>{} : std::span<const Tensor>(oracle[idx]);
        const LossBreakdown b = loss_total(fr, sample, target, config.weights);
        const Real total = b.total.item();
        if (!std::isfinite(total) || !finite(b.values)) {
          throw NonFiniteLossError("non-finite loss at step " + std::to_string(step) + " on sample '" + sample.id +
                                       "': " + describe(b.values),
                                   step, sample.id, b.values);
        }
        add_into(rec.values, b.values, inv);
        rec.total += inv * total;
        rec.permutations.push_back(permutation_string(b.permutation));
        if (b.total.requires_grad()) tape.backward(scale(b.total, inv));
      }
      adam.step(model.parameters(), rec.lr);

      if (inputs.dev && (step % config.eval_every == 0 || step == total_steps)) {
        rec.dev_der = evaluate(model, *inputs.dev, config.decision_threshold, config.median_window).der;
        if (!best_der || *rec.dev_der < *best_der) {
          best_der = rec.dev_der;
          best_step = step;
          best.emplace(clone_model(model));
        }
      }
      if (inputs.on_record) inputs.on_record(rec);
      log.push_back(std::move(rec));
    }
  }
  if (!best) {
    best.emplace(clone_model(model));
    best_step = step;
  }
  return TrainResult{std::move(model), std::move(*best), std::move(log), best_der, best_step, warm};
}

InferResult infer(const EendDemux& model, const Tensor& features, Real frame_duration, const std::string& recording,
                  Real threshold, std::size_t median_window) {
  if (features.rank() != 2 || features.extent(0) != model.config().feature_dim) {
    throw DimensionError("infer: features are " + to_string(features.shape()) + " but the model expects F=" +
                         std::to_string(model.config().feature_dim));
  }
  InferResult r;
  r.output = model.forward(features.detach()).output;
  r.activity = binarize(r.output.posteriors, r.output.valid_set, threshold, median_window);
  r.segments = segments_from_activity(r.activity, frame_duration, recording);
  return r;
}

DerReport evaluate(const EendDemux& model, const Corpus& corpus, Real threshold, std::size_t median_window) {
  std::vector<DerReport> reports;
  reports.reserve(corpus.samples.size());
  for (const auto& s : corpus.samples) {
    const ActivityMatrix ref = activity_from_labels(s.labels);
    const InferResult r = infer(model, s.features, corpus.frame_duration, s.id, threshold, median_window);
    if (ref.speech_frames() == 0) {
      DerReport empty;
      empty.false_alarm = r.activity.speech_frames();
      empty.scored_frames = s.frames();
      reports.push_back(empty);
      continue;
    }
    reports.push_back(der(ref, r.activity, corpus.frame_duration));
  }
  return combine(reports);
}

EmbeddingStats embedding_stats(const EendDemux& model, const Corpus& corpus,
                               const std::vector<std::vector<Tensor>>& oracle) {
  EmbeddingStats st;
  if (corpus.samples.empty()) return st;
  std::size_t dist_n = 0, cos_n = 0, correct = 0;
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
    const auto& s = corpus.samples[i];
    const ForwardResult fr = model.forward(s.features);
    correct += fr.output.valid_set.size() == s.num_speakers();
    std::vector<Real> p(s.existence.begin(), s.existence.end());
    const auto valid = valid_speaker_set(p);
    if (valid.empty()) continue;
    const PitResult pit = loss_diar(fr.output.posteriors, s.labels, valid);
    const auto& e = fr.embeddings.demuxed;
    if (!oracle.empty()) {
      st.distance += loss_dis(e, oracle[i], pit).item();
      ++dist_n;
    }
    st.l1 += loss_spa(e, valid).item();
    for (std::size_t a = 0; a < valid.size(); ++a)
      for (std::size_t b = a + 1; b < valid.size(); ++b) {
        st.cross_cosine += mean(abs(cosine_similarity(e[pit.head(a)], e[pit.head(b)], 0, kCosineEps * kCosineEps))).item();
        ++cos_n;
      }
  }
  const Real samples = static_cast<Real>(corpus.samples.size());
  if (dist_n) st.distance /= static_cast<Real>(dist_n);
  if (cos_n) st.cross_cosine /= static_cast<Real>(cos_n);
  st.l1 /= samples;
  st.cardinality_accuracy = static_cast<Real>(correct) / samples;
  return st;
}

TrainResult run_training(const TrainConfig& config, std::ostream* progress) {
  config.validate();
  if (config.train_corpus.empty()) throw ConfigError("train_corpus is required");
  if (config.weights.dis > 0 && config.speaker_encoder.empty()) {
    throw ConfigError("weights.dis > 0 needs a speaker_encoder checkpoint (or set weights.dis to 0)");
  }
  const Corpus train_corpus = read_corpus(config.train_corpus);
  std::optional<Corpus> dev_corpus;
  if (!config.dev_corpus.empty()) dev_corpus = read_corpus(config.dev_corpus);
  std::optional<SpeakerEncoder> encoder;
  if (!config.speaker_encoder.empty()) encoder.emplace(speaker_encoder_from_checkpoint(load_checkpoint(config.speaker_encoder)));
  std::optional<EendDemux> init;
  if (!config.init_checkpoint.empty()) init.emplace(model_from_checkpoint(load_checkpoint(config.init_checkpoint)));

  const std::filesystem::path out(config.out_dir);
  std::filesystem::create_directories(out);
  {
    std::ofstream cfg(out / "config.json");
    cfg << nlohmann::json(config).dump(2) << "\n";
  }
  std::ofstream log(out / "train_log.jsonl");
  if (!log) throw ConfigError("cannot write " + (out / "train_log.jsonl").string());

  TrainInputs inputs;
  inputs.train = &train_corpus;
  inputs.dev = dev_corpus ? &*dev_corpus : nullptr;
  inputs.oracle = (encoder && config.weights.dis > 0) ? &*encoder : nullptr;
  inputs.init = init ? &*init : nullptr;
  inputs.on_record = [&](const StepRecord& rec) {
    log << rec.to_json().dump() << "\n";
    log.flush();
    if (progress && (rec.dev_der || rec.step % 50 == 0)) {
      *progress << "step " << rec.step << " lr " << rec.lr << " total " << rec.total;
      if (rec.dev_der) *progress << " dev DER " << *rec.dev_der * 100 << "%";
      *progress << "\n";
    }
  };
  TrainResult result = train(config, inputs);

  Checkpoint last = make_checkpoint(result.model);
  last.step = result.log.size();
  save_checkpoint(last, out / "last.ckpt");
  Checkpoint best = make_checkpoint(result.best);
  best.step = result.best_step;
  save_checkpoint(best, out / "best.ckpt");
  return result;
}

}  // namespace demux
