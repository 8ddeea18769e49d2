#include <doctest.h>

#include "demux/config.hpp"

using namespace demux;
using nlohmann::json;

TEST_CASE("default loss weights") {
  const LossWeights w;
  CHECK(w.diar == 1);
  CHECK(w.ext == 1e-2);
  CHECK(w.dis == 2.5);
  CHECK(w.ort == 1e-3);
  CHECK(w.spa == 1e-5);
}

TEST_CASE("train config json round trip") {
  TrainConfig c = train_preset("desk");
  c.seed = 77;
  c.weights.dis = 0;
  c.model.max_speakers = 3;
  c.train_corpus = "somewhere";
  const json j = c;
  const TrainConfig back = j.get<TrainConfig>();
  CHECK(json(back) == j);
  CHECK(back.seed == 77);
  CHECK(back.model == c.model);
  CHECK(back.weights == c.weights);
}

TEST_CASE("presets") {
  const ModelConfig full = model_preset("full");
  CHECK(full.feature_dim == 80);
  CHECK(full.embed_dim == 256);
  CHECK(full.encoder_blocks == 4);
  CHECK(full.decoder_blocks == 2);
  CHECK(full.attention_heads == 4);
  const TrainConfig t = train_preset("full");
  CHECK(t.peak_lr == 5e-4);
  CHECK(t.warmup_epochs == 30);
  CHECK(t.batch_size * t.grad_accumulation == 128);
  CHECK(model_preset("desk").embed_dim == 32);
  CHECK_THROWS_AS(model_preset("huge"), ConfigError);
}

TEST_CASE("validation") {
  ModelConfig m;
  m.attention_heads = 5;  // 32 is not divisible by 5
  CHECK_THROWS_AS(m.validate(), ConfigError);
  m = ModelConfig{};
  m.demux_kernel_size = 4;
  CHECK_THROWS_AS(m.validate(), ConfigError);
  TrainConfig t;
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.eval_every = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  CHECK_THROWS(json::parse(R"({"embed_dim": "big"})").get<ModelConfig>());
}

TEST_CASE("synthesis job json round trip") {
  SynthJob job;
  job.synth.num_sequences = 12;
  job.synth.overlap_target = 0.3;
  job.synth.speakers_per_mix = {2, 3};
  job.hold_out_speakers = true;
  const json j = job;
  const SynthJob back = j.get<SynthJob>();
  CHECK(json(back) == j);
  CHECK(back.synth.overlap_target.value() == 0.3);
  CHECK(back.synth.speakers_per_mix == std::vector<std::size_t>{2, 3});
}

TEST_CASE("unknown keys are rejected") {
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"batchsize": 4})").get<TrainConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"model": {"embed": 8}})").get<TrainConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"synth": {"frames": 30}})").get<SynthJob>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"pool": {"speakers": 6}})").get<SynthJob>(), ConfigError);
  CHECK_NOTHROW(nlohmann::json::parse(R"({"frames": 30, "pool": {"num_speakers": 6}})").get<SynthJob>());
}
