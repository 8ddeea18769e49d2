#include <doctest.h>

#include <cmath>

#include "demux/optim.hpp"
#include "demux/training.hpp"
#include "oracles.hpp"

using namespace demux;

namespace {

Corpus small_corpus(std::size_t n, std::size_t feature_dim = 4, std::uint64_t seed = 3) {
  SynthConfig c;
  c.num_sequences = n;
  c.frames = 30;
  c.feature_dim = feature_dim;
  c.pool.num_speakers = 6;
  c.seed = seed;
  return generate_corpus(c);
}

// One speaker talking all the time with a fixed, noise-free feature vector.
Corpus trivial_corpus(std::size_t n) {
  Corpus c;
  c.feature_dim = 4;
  c.max_speakers = 1;
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor source({4, 20}, std::vector<Real>(80, 1.0));
    c.samples.push_back(mix_sources("seq" + std::to_string(i), {source}, Tensor::full({20, 1}, 1), {0}));
  }
  return c;
}

TrainConfig tiny_train(std::size_t speakers = 2) {
  TrainConfig t;
  t.model = oracle::tiny_model(speakers, 4);
  t.batch_size = 4;
  t.peak_lr = 5e-3;
  t.warmup_epochs = 2;
  t.epochs = 100;
  t.eval_every = 10;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_CASE("noam schedule") {
  CHECK(noam_lr(100, 100, 2e-3) == doctest::Approx(2e-3).epsilon(1e-15));
  CHECK(noam_lr(50, 100, 2e-3) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(noam_lr(400, 100, 2e-3) == doctest::Approx(1e-3).epsilon(1e-15));
  CHECK(noam_lr(1, 100, 2e-3) == doctest::Approx(2e-5).epsilon(1e-15));
}

TEST_CASE("steps per epoch and warmup conversion") {
  TrainConfig t;
  t.batch_size = 8;
  t.grad_accumulation = 2;
  t.warmup_epochs = 2.5;
  CHECK(steps_per_epoch(64, t) == 4);
  CHECK(steps_per_epoch(65, t) == 5);
  CHECK(warmup_steps(64, t) == 10);
}

TEST_CASE("adam moves parameters against the gradient") {
  nn::ParameterStore store;
  std::mt19937_64 rng(1);
  Tensor w = store.create("w", {3}, rng, 1);
  const std::vector<Real> before(w.data().begin(), w.data().end());
  {
    ad::Tape tape;
    tape.backward(ad::sum(w * w));
  }
  Adam adam;
  adam.step(store, 0.1);
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(w[i] == doctest::Approx(before[i] - 0.1 * (before[i] > 0 ? 1 : -1)).epsilon(1e-6));
}

TEST_CASE("gradient accumulation equals a larger batch") {
  const Corpus corpus = small_corpus(8);
  TrainConfig a = tiny_train();
  a.batch_size = 2;
  a.grad_accumulation = 2;
  a.max_steps = 2;
  TrainConfig b = tiny_train();
  b.batch_size = 4;
  b.max_steps = 2;
  const auto ra = train(a, {.train = &corpus});
  const auto rb = train(b, {.train = &corpus});
  for (const auto& [name, t] : ra.model.parameters().all()) {
    const Tensor u = rb.model.parameters().get(name);
    for (std::size_t i = 0; i < t.size(); ++i) CHECK(std::abs(t[i] - u[i]) <= 1e-10);
  }
}

TEST_CASE("training is deterministic") {
  const Corpus corpus = small_corpus(8);
  TrainConfig t = tiny_train();
  t.max_steps = 6;
  const auto r1 = train(t, {.train = &corpus, .dev = &corpus});
  const auto r2 = train(t, {.train = &corpus, .dev = &corpus});
  REQUIRE(r1.log.size() == 6);
  for (std::size_t i = 0; i < r1.log.size(); ++i) CHECK(r1.log[i].to_json().dump() == r2.log[i].to_json().dump());
  CHECK(r1.log.back().dev_der.has_value());
}

TEST_CASE("one always-active speaker is learned exactly") {
  const Corpus corpus = trivial_corpus(4);
  TrainConfig t = tiny_train(1);
  t.max_steps = 60;
  const auto r = train(t, {.train = &corpus, .dev = &corpus});
  CHECK(evaluate(r.best, corpus).der == 0);
  const auto out = infer(r.best, corpus.samples[0].features, 0.01, "seq0");
  REQUIRE(out.segments.segments.size() == 1);
  CHECK(out.segments.segments[0].onset == 0);
  CHECK(out.segments.segments[0].duration == doctest::Approx(0.2));
}

TEST_CASE("dimension mismatches name both sides") {
  const Corpus corpus = small_corpus(4, 6);
  try {
    train(tiny_train(), {.train = &corpus});
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("F=6") != std::string::npos);
    CHECK(msg.find("F=4") != std::string::npos);
  }
}

TEST_CASE("inference with no confident speaker returns an empty segment list") {
  EendDemux model(oracle::tiny_model(2, 4), 2);
  for (auto& v : model.parameters().get("existence.bias").mutable_data()) v = -50;
  std::mt19937_64 rng(3);
  const Tensor x = oracle::random_tensor({4, 10}, rng);
  const auto out = infer(model, x, 0.01, "r");
  CHECK(out.output.valid_set.empty());
  CHECK(out.segments.segments.empty());
  CHECK(out.segments.recording == "r");
  const auto again = infer(model, x, 0.01, "r");
  CHECK(std::ranges::equal(out.output.posteriors.data(), again.output.posteriors.data()));
}

TEST_CASE("speaker encoder pretraining learns speaker identity") {
  SynthConfig c;  // desk scale: F=16, 20 speakers
  c.num_sequences = 64;
  c.seed = 5;
  const auto split = split_corpus(generate_corpus(c), {0.75, 0.0, 0.25}, 1);
  PretrainConfig pc;
  pc.seed = 5;
  const auto r = pretrain_speaker_encoder(split.train, pc);
  CHECK(r.encoder.frozen());
  REQUIRE(r.step_losses.size() > 4);
  const std::size_t k = r.classes.size();
  CHECK(r.step_losses.front() > r.step_losses.back());
  const Real acc = linear_probe_accuracy(r.encoder, split.train, split.test);
  CHECK(acc >= 3.0 / static_cast<Real>(k));
  CHECK(acc > linear_probe_accuracy(SpeakerEncoder(pc.model, 1), split.train, split.test));
}

TEST_CASE("sparsity weight shrinks embedding magnitude") {
  const Corpus corpus = small_corpus(8);
  std::vector<Real> l1;
  for (Real w : {0.0, 1e-4, 1e-3}) {
    TrainConfig t = tiny_train();
    t.weights.dis = 0;
    t.weights.spa = w;
    t.max_steps = 40;
    const auto r = train(t, {.train = &corpus});
    l1.push_back(embedding_stats(r.model, corpus, {}).l1);
  }
  CHECK(l1[1] <= l1[0]);
  CHECK(l1[2] <= l1[1]);
}
