#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "demux/model.hpp"
#include "demux/speaker_encoder.hpp"
#include "demux/training.hpp"
#include "oracles.hpp"

using namespace demux;
using ad::Real;
using ad::Shape;

namespace {

Tensor permute_columns(const Tensor& x, const std::vector<std::size_t>& perm) {
  return ad::gather_columns(x, perm);
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  Real m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

void fill(Tensor t, Real v) {
  for (auto& x : t.mutable_data()) x = v;
}

}  // namespace

TEST_CASE("forward shapes") {
  const EendDemux model(oracle::tiny_model(3, 5), 1);
  std::mt19937_64 rng(1);
  for (std::size_t frames : {1, 7}) {
    const auto fw = model.forward(oracle::random_tensor({5, frames}, rng));
    CHECK(fw.embeddings.mixture.shape() == Shape{8, frames});
    REQUIRE(fw.embeddings.demuxed.size() == 3);
    for (const auto& e : fw.embeddings.demuxed) CHECK(e.shape() == Shape{8, frames});
    CHECK(stack_demuxed(fw.embeddings.demuxed).shape() == Shape{8, frames, 3});
    CHECK(fw.embeddings.prototypes.shape() == Shape{8, 3});
    CHECK(fw.embeddings.attractors.shape() == Shape{8, 3});
    CHECK(fw.output.posteriors.shape() == Shape{frames, 3});
    CHECK(fw.output.existence.size() == 3);
  }
  CHECK_THROWS_AS(model.forward(Tensor::zeros({4, 3})), ad::ShapeError);
}

TEST_CASE("mixture encoder is frame-permutation equivariant") {
  const EendDemux model(oracle::tiny_model(2, 5), 4);
  std::mt19937_64 rng(2);
  const Tensor x = oracle::random_tensor({5, 9}, rng);
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Tensor e = model.mixture_encode(x);
  CHECK(max_abs_diff(model.mixture_encode(permute_columns(x, perm)), permute_columns(e, perm)) <= 1e-10);

  // identical frames give identical embeddings
  const std::size_t dup[] = {0, 1, 2, 0, 3};
  const Tensor xd = ad::gather_columns(x, dup);
  const Tensor ed = model.mixture_encode(xd);
  for (std::size_t d = 0; d < 8; ++d) CHECK(ed.at(d, 0) == ed.at(d, 3));
}

TEST_CASE("attractor decoder is speaker-permutation equivariant") {
  const EendDemux model(oracle::tiny_model(3, 5), 5);
  std::mt19937_64 rng(3);
  const Tensor protos = oracle::random_tensor({8, 3}, rng);
  const Tensor mixture = oracle::random_tensor({8, 6}, rng);
  const std::vector<std::size_t> perm{2, 0, 1};
  const Tensor a = model.attractor_decode(protos, mixture);
  CHECK(max_abs_diff(model.attractor_decode(permute_columns(protos, perm), mixture), permute_columns(a, perm)) <= 1e-10);
}

TEST_CASE("suppressed cross-attention leaves attractors dependent only on prototypes") {
  EendDemux model(oracle::tiny_model(2, 5), 6);
  fill(model.parameters().get("decoder.block0.cross_attn.value.weight"), 0);
  fill(model.parameters().get("decoder.block0.cross_attn.value.bias"), 0);
  fill(model.parameters().get("decoder.block0.cross_attn.output.bias"), 0);
  std::mt19937_64 rng(4);
  const Tensor protos = oracle::random_tensor({8, 2}, rng);
  const Tensor a1 = model.attractor_decode(protos, oracle::random_tensor({8, 5}, rng));
  const Tensor a2 = model.attractor_decode(protos, oracle::random_tensor({8, 11}, rng));
  CHECK(max_abs_diff(a1, a2) == 0);
}

TEST_CASE("demultiplexer branches are independent") {
  EendDemux model(oracle::tiny_model(3, 5), 7);
  std::mt19937_64 rng(5);
  const Tensor e = oracle::random_tensor({8, 6}, rng);
  const auto before = model.demultiplex(e);
  for (auto& w : model.parameters().get(EendDemux::branch_prefix(0) + ".conv0.weight").mutable_data()) w += 0.5;
  const auto after = model.demultiplex(e);
  CHECK(max_abs_diff(before[0], after[0]) > 0);
  CHECK(max_abs_diff(before[1], after[1]) == 0);
  CHECK(max_abs_diff(before[2], after[2]) == 0);

  // zero input with zero bias gives zero output
  for (const auto& b : model.demultiplex(Tensor::zeros({8, 6})))
    for (Real v : b.data()) CHECK(v == 0);
}

TEST_CASE("prototype pooling") {
  const Tensor c({2, 3}, {1, 1, 1, -2, -2, -2});
  const Tensor p = prototypes(std::vector<Tensor>{c});
  CHECK(p.at(0, 0) == 1);
  CHECK(p.at(1, 0) == -2);
  const Tensor sym({2, 2}, {0.5, -0.5, 3, -3});
  const Tensor z = prototypes(std::vector<Tensor>{sym});
  CHECK(z[0] == 0);
  CHECK(z[1] == 0);
  std::mt19937_64 rng(8);
  const Tensor r = oracle::random_tensor({3, 4}, rng);
  const Tensor m = prototypes(std::vector<Tensor>{r});
  for (std::size_t d = 0; d < 3; ++d)
    CHECK(m.at(d, 0) == doctest::Approx((r.at(d, 0) + r.at(d, 1) + r.at(d, 2) + r.at(d, 3)) / 4).epsilon(1e-14));
}

TEST_CASE("posterior and existence heads") {
  const Tensor e1({2, 1}, {1, 2});
  const Tensor a({2, 1}, {3, -1});
  CHECK(posteriors(std::vector<Tensor>{e1}, a).item() == doctest::Approx(1 / (1 + std::exp(-1.0))).epsilon(1e-14));
  const Tensor orth({2, 1}, {1, 3});
  CHECK(posteriors(std::vector<Tensor>{orth}, a).item() == 0.5);

  EendDemux model(oracle::tiny_model(2, 5), 9);
  fill(model.parameters().get("existence.weight"), 0);
  fill(model.parameters().get("existence.bias"), 0);
  std::mt19937_64 rng(6);
  const Tensor attractors = oracle::random_tensor({8, 2}, rng);
  const Tensor neutral = model.existence(attractors);
  for (Real p : neutral.data()) CHECK(p == 0.5);
  fill(model.parameters().get("existence.bias"), 10);
  const Real high = model.existence(attractors)[0];
  fill(model.parameters().get("existence.bias"), -10);
  const Real low = model.existence(attractors)[0];
  CHECK(high > 0.9999);
  CHECK(low < 1e-4);
  fill(model.parameters().get("existence.bias"), 0.3);
  auto w = model.parameters().get("existence.weight");
  fill(w, 0);
  w.mutable_data()[0] = 2;
  CHECK(model.existence(attractors)[1] == doctest::Approx(1 / (1 + std::exp(-(2 * attractors.at(0, 1) + 0.3)))));
}

TEST_CASE("valid speaker set") {
  CHECK(valid_speaker_set(std::vector<Real>{1, 0, 1}) == std::vector<std::size_t>{0, 2});
  CHECK(valid_speaker_set(std::vector<Real>{0.5, 0.4999}) == std::vector<std::size_t>{0});
  CHECK(valid_speaker_set(std::vector<Real>{0, 0, 0}).empty());
}

TEST_CASE("adaptation copies and grows") {
  const EendDemux base(oracle::tiny_model(2, 5), 11);
  const EendDemux same = adapt(base, oracle::tiny_model(2, 5), 3);
  for (const auto& [name, t] : base.parameters().all()) {
    CAPTURE(name);
    CHECK(std::ranges::equal(t.data(), same.parameters().get(name).data()));
    CHECK_FALSE(t.same_storage(same.parameters().get(name)));
  }
  const EendDemux grown = adapt(base, oracle::tiny_model(3, 5), 3);
  std::size_t fresh = 0;
  for (const auto& [name, t] : grown.parameters().all()) {
    if (base.parameters().contains(name)) {
      CAPTURE(name);
      CHECK(std::ranges::equal(t.data(), base.parameters().get(name).data()));
    } else {
      CHECK(name.starts_with(EendDemux::branch_prefix(2)));
      ++fresh;
    }
  }
  CHECK(fresh > 0);
  CHECK_THROWS(adapt(grown, oracle::tiny_model(2, 5), 3));
  CHECK_THROWS(adapt(base, oracle::tiny_model(2, 6), 3));
}

TEST_CASE("frozen speaker encoder receives no gradient") {
  SpeakerEncoder enc(oracle::tiny_model(2, 5), 2);
  enc.freeze();
  CHECK(enc.frozen());
  std::mt19937_64 rng(12);
  Tensor x = oracle::random_tensor({5, 6}, rng);
  x.set_requires_grad(true);
  ad::Tape tape;
  const Tensor y = enc.encode(x);
  CHECK(y.shape() == Shape{8, 6});
  tape.backward(ad::sum(y * y));
  for (const auto& [name, t] : enc.parameters().all()) {
    CAPTURE(name);
    CHECK_FALSE(t.has_grad());
  }
}
