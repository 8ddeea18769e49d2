#include "demux/config.hpp"

namespace demux {

namespace {

// Keys the default object would not serialize are typos or misplaced
// sections; they would otherwise be silently ignored.
void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    if (known[key].is_object() && value.is_object()) reject_unknown_keys(value, known[key], where + "." + key);
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (feature_dim == 0 || embed_dim == 0) throw ConfigError("model: feature_dim and embed_dim must be positive");
  if (max_speakers == 0) throw ConfigError("model: max_speakers must be at least 1");
  if (attention_heads == 0 || embed_dim % attention_heads != 0) {
    throw ConfigError("model: embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(attention_heads) + " attention heads");
  }
  if (demux_kernel_size % 2 == 0 || speaker_encoder_kernel % 2 == 0) {
    throw ConfigError("model: convolution kernel sizes must be odd");
  }
  if (ffn_dim == 0 || demux_cnn_stacks == 0) throw ConfigError("model: ffn_dim and demux_cnn_stacks must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must lie in [0, 1)");
}

void LossWeights::validate() const {
  if (diar < 0 || ext < 0 || dis < 0 || ort < 0 || spa < 0) throw ConfigError("loss weights must be nonnegative");
}

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (batch_size == 0 || grad_accumulation == 0) throw ConfigError("train: batch_size and grad_accumulation must be positive");
  if (!(peak_lr > 0)) throw ConfigError("train: peak_lr must be positive");
  if (epochs == 0) throw ConfigError("train: epochs must be positive");
  if (!(warmup_epochs > 0) || warmup_epochs >= static_cast<Real>(epochs)) {
    throw ConfigError("train: warmup_epochs must be positive and below epochs");
  }
  if (!(decision_threshold > 0 && decision_threshold < 1)) throw ConfigError("train: decision_threshold must lie in (0, 1)");
  if (median_window % 2 == 0) throw ConfigError("train: median_window must be odd");
  if (eval_every == 0) throw ConfigError("train: eval_every must be positive");
}

ModelConfig model_preset(const std::string& name) {
  ModelConfig c;
  if (name == "desk") return c;
  if (name == "full") {
    c.feature_dim = 80;
    c.embed_dim = 256;
    c.encoder_blocks = 4;
    c.decoder_blocks = 2;
    c.attention_heads = 4;
    c.ffn_dim = 1024;
    c.demux_cnn_stacks = 2;
    c.demux_kernel_size = 5;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (expected desk or full)");
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  c.model = model_preset(name);
  if (name == "full") {
    c.batch_size = 64;
    c.grad_accumulation = 2;
    c.peak_lr = 5e-4;
    c.warmup_epochs = 30;
    c.epochs = 100;
  }
  return c;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"feature_dim", c.feature_dim},
       {"embed_dim", c.embed_dim},
       {"max_speakers", c.max_speakers},
       {"encoder_blocks", c.encoder_blocks},
       {"decoder_blocks", c.decoder_blocks},
       {"attention_heads", c.attention_heads},
       {"ffn_dim", c.ffn_dim},
       {"demux_cnn_stacks", c.demux_cnn_stacks},
       {"demux_kernel_size", c.demux_kernel_size},
       {"speaker_encoder_kernel", c.speaker_encoder_kernel},
       {"dropout", c.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  reject_unknown_keys(j, nlohmann::json(d), "model");
  c.feature_dim = j.value("feature_dim", d.feature_dim);
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.max_speakers = j.value("max_speakers", d.max_speakers);
  c.encoder_blocks = j.value("encoder_blocks", d.encoder_blocks);
  c.decoder_blocks = j.value("decoder_blocks", d.decoder_blocks);
  c.attention_heads = j.value("attention_heads", d.attention_heads);
  c.ffn_dim = j.value("ffn_dim", d.ffn_dim);
  c.demux_cnn_stacks = j.value("demux_cnn_stacks", d.demux_cnn_stacks);
  c.demux_kernel_size = j.value("demux_kernel_size", d.demux_kernel_size);
  c.speaker_encoder_kernel = j.value("speaker_encoder_kernel", d.speaker_encoder_kernel);
  c.dropout = j.value("dropout", d.dropout);
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"diar", w.diar}, {"ext", w.ext}, {"dis", w.dis}, {"ort", w.ort}, {"spa", w.spa}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  LossWeights d;
  reject_unknown_keys(j, nlohmann::json(d), "weights");
  w.diar = j.value("diar", d.diar);
  w.ext = j.value("ext", d.ext);
  w.dis = j.value("dis", d.dis);
  w.ort = j.value("ort", d.ort);
  w.spa = j.value("spa", d.spa);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"train_corpus", c.train_corpus},
       {"dev_corpus", c.dev_corpus},
       {"speaker_encoder", c.speaker_encoder},
       {"init_checkpoint", c.init_checkpoint},
       {"out_dir", c.out_dir},
       {"model", c.model},
       {"weights", c.weights},
       {"batch_size", c.batch_size},
       {"grad_accumulation", c.grad_accumulation},
       {"peak_lr", c.peak_lr},
       {"warmup_epochs", c.warmup_epochs},
       {"epochs", c.epochs},
       {"max_steps", c.max_steps},
       {"eval_every", c.eval_every},
       {"decision_threshold", c.decision_threshold},
       {"median_window", c.median_window},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  reject_unknown_keys(j, nlohmann::json(d), "train config");
  c.train_corpus = j.value("train_corpus", d.train_corpus);
  c.dev_corpus = j.value("dev_corpus", d.dev_corpus);
  c.speaker_encoder = j.value("speaker_encoder", d.speaker_encoder);
  c.init_checkpoint = j.value("init_checkpoint", d.init_checkpoint);
  c.out_dir = j.value("out_dir", d.out_dir);
  c.model = j.value("model", d.model);
  c.weights = j.value("weights", d.weights);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.grad_accumulation = j.value("grad_accumulation", d.grad_accumulation);
  c.peak_lr = j.value("peak_lr", d.peak_lr);
  c.warmup_epochs = j.value("warmup_epochs", d.warmup_epochs);
  c.epochs = j.value("epochs", d.epochs);
  c.max_steps = j.value("max_steps", d.max_steps);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.decision_threshold = j.value("decision_threshold", d.decision_threshold);
  c.median_window = j.value("median_window", d.median_window);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
  j = {{"corpus", c.corpus}, {"out", c.out},     {"model", c.model}, {"epochs", c.epochs},
       {"batch_size", c.batch_size}, {"lr", c.lr}, {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
  PretrainConfig d;
  reject_unknown_keys(j, nlohmann::json(d), "pretrain config");
  c.corpus = j.value("corpus", d.corpus);
  c.out = j.value("out", d.out);
  c.model = j.value("model", d.model);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.lr = j.value("lr", d.lr);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const SynthJob& c) {
  const auto& s = c.synth;
  const auto& p = s.pool;
  j = {{"num_sequences", s.num_sequences},
       {"frames", s.frames},
       {"feature_dim", s.feature_dim},
       {"max_speakers", s.max_speakers},
       {"speakers_per_mix", s.speakers_per_mix},
       {"pool",
        {{"num_speakers", p.num_speakers},
         {"separation", p.separation},
         {"mean_scale", p.mean_scale},
         {"scale_min", p.scale_min},
         {"scale_max", p.scale_max},
         {"p_on_to_off_min", p.p_on_to_off_min},
         {"p_on_to_off_max", p.p_on_to_off_max},
         {"p_off_to_on_min", p.p_off_to_on_min},
         {"p_off_to_on_max", p.p_off_to_on_max}}},
       {"overlap_target", s.overlap_target ? nlohmann::json(*s.overlap_target) : nlohmann::json(nullptr)},
       {"overlap_tolerance", s.overlap_tolerance},
       {"max_attempts", s.max_attempts},
       {"frame_duration", s.frame_duration},
       {"seed", s.seed},
       {"split", {{"train", c.split.train}, {"dev", c.split.dev}, {"test", c.split.test}}},
       {"hold_out_speakers", c.hold_out_speakers},
       {"out", c.out}};
}

void from_json(const nlohmann::json& j, SynthJob& c) {
  const SynthJob d;
  reject_unknown_keys(j, nlohmann::json(d), "synth config");
  auto& s = c.synth;
  s.num_sequences = j.value("num_sequences", d.synth.num_sequences);
  s.frames = j.value("frames", d.synth.frames);
  s.feature_dim = j.value("feature_dim", d.synth.feature_dim);
  s.max_speakers = j.value("max_speakers", d.synth.max_speakers);
  s.speakers_per_mix = j.value("speakers_per_mix", d.synth.speakers_per_mix);
  const nlohmann::json pool = j.value("pool", nlohmann::json::object());
  auto& p = s.pool;
  p.num_speakers = pool.value("num_speakers", d.synth.pool.num_speakers);
  p.separation = pool.value("separation", d.synth.pool.separation);
  p.mean_scale = pool.value("mean_scale", d.synth.pool.mean_scale);
  p.scale_min = pool.value("scale_min", d.synth.pool.scale_min);
  p.scale_max = pool.value("scale_max", d.synth.pool.scale_max);
  p.p_on_to_off_min = pool.value("p_on_to_off_min", d.synth.pool.p_on_to_off_min);
  p.p_on_to_off_max = pool.value("p_on_to_off_max", d.synth.pool.p_on_to_off_max);
  p.p_off_to_on_min = pool.value("p_off_to_on_min", d.synth.pool.p_off_to_on_min);
  p.p_off_to_on_max = pool.value("p_off_to_on_max", d.synth.pool.p_off_to_on_max);
  s.overlap_target.reset();
  if (j.contains("overlap_target") && !j["overlap_target"].is_null()) s.overlap_target = j["overlap_target"].get<Real>();
  s.overlap_tolerance = j.value("overlap_tolerance", d.synth.overlap_tolerance);
  s.max_attempts = j.value("max_attempts", d.synth.max_attempts);
  s.frame_duration = j.value("frame_duration", d.synth.frame_duration);
  s.seed = j.value("seed", d.synth.seed);
  const nlohmann::json split = j.value("split", nlohmann::json::object());
  c.split.train = split.value("train", d.split.train);
  c.split.dev = split.value("dev", d.split.dev);
  c.split.test = split.value("test", d.split.test);
  c.hold_out_speakers = j.value("hold_out_speakers", d.hold_out_speakers);
  c.out = j.value("out", d.out);
}

}  // namespace demux
