#include <doctest.h>

#include <cmath>
#include <random>

#include "demux/gradcheck_suite.hpp"
#include "demux/losses.hpp"
#include "oracles.hpp"

using namespace demux;
using ad::Real;
using ad::Shape;

namespace {

Real h(Real y, Real p) { return -y * std::log(p) - (1 - y) * std::log(1 - p); }

const std::size_t all2[] = {0, 1};

PitResult identity_pit(std::size_t n) {
  PitResult pit;
  for (std::size_t i = 0; i < n; ++i) {
    pit.valid.push_back(i);
    pit.permutation.push_back(i);
  }
  return pit;
}

}  // namespace

TEST_CASE("probability clipping and cross entropy") {
  CHECK(clip_prob(Tensor::scalar(0)).item() == 1e-7);
  CHECK(clip_prob(Tensor::scalar(0.3)).item() == 0.3);
  const Real v = binary_cross_entropy(Tensor::scalar(1), Tensor::scalar(1)).item();
  CHECK(v == doctest::Approx(-std::log(1 - 1e-7)).epsilon(1e-12));
  CHECK(v == doctest::Approx(1e-7).epsilon(1e-6));
  CHECK_THROWS_AS(clip_prob(Tensor::scalar(0.2), 0.6), LossError);
}

TEST_CASE("cost matrix entries") {
  const Tensor y({2, 2}, {1, 0, 0, 1});
  const Tensor p({2, 2}, {0.9, 0.2, 0.1, 0.8});
  const CostMatrix c = bce_cost_matrix(p, y, all2);
  CHECK(c(0, 0) == doctest::Approx(h(1, 0.9) + h(0, 0.1)).epsilon(1e-14));
  CHECK(c(0, 1) == doctest::Approx(h(1, 0.2) + h(0, 0.8)).epsilon(1e-14));
  CHECK(c(1, 0) == doctest::Approx(h(0, 0.9) + h(1, 0.1)).epsilon(1e-14));
  CHECK(c(1, 1) == doctest::Approx(h(0, 0.2) + h(1, 0.8)).epsilon(1e-14));

  const CostMatrix u = bce_cost_matrix(Tensor::full({5, 2}, 0.5), Tensor({5, 2}, {1, 0, 0, 1, 1, 1, 0, 0, 1, 0}), all2);
  for (Real x : u.values()) CHECK(x == doctest::Approx(5 * std::log(2.0)).epsilon(1e-14));

  const CostMatrix exact = bce_cost_matrix(y, y, all2);
  CHECK(exact(0, 0) <= 2 * 2e-7);
  CHECK(exact(1, 1) <= 2 * 2e-7);
}

TEST_CASE("diarization loss picks the better permutation") {
  const Tensor y({2, 2}, {1, 0, 0, 1});
  const Tensor p({2, 2}, {0.9, 0.2, 0.1, 0.8});
  const Real identity = h(1, 0.9) + h(0, 0.1) + h(0, 0.2) + h(1, 0.8);
  const Real swapped = h(1, 0.2) + h(0, 0.8) + h(0, 0.9) + h(1, 0.1);
  const auto r = loss_diar(p, y, all2);
  CHECK(r.loss.item() == doctest::Approx(std::min(identity, swapped) / 4).epsilon(1e-14));
  CHECK(r.permutation == std::vector<std::size_t>{0, 1});

  const auto half = loss_diar(Tensor::full({4, 2}, 0.5), Tensor({4, 2}, {1, 0, 1, 1, 0, 0, 0, 1}), all2);
  CHECK(half.loss.item() == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(loss_diar(p, y, std::vector<std::size_t>{}), LossError);
  CHECK_THROWS_AS(loss_diar(Tensor::zeros({3, 2}), y, all2), LossError);
}

TEST_CASE("diarization loss is invariant to relabeling reference columns") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor p = ad::sigmoid(oracle::random_tensor({7, 3}, rng, -3, 3));
    const auto act = oracle::random_activity(7, 3, 0.5, rng);
    std::vector<Real> yv(21);
    for (std::size_t i = 0; i < 21; ++i) yv[i] = act.active[i];
    const Tensor y({7, 3}, yv);
    std::vector<std::size_t> perm{0, 1, 2};
    std::shuffle(perm.begin(), perm.end(), rng);
    const std::size_t all3[] = {0, 1, 2};
    CHECK(loss_diar(p, y, all3).loss.item() == loss_diar(p, ad::gather_columns(y, perm), all3).loss.item());
  }
}

TEST_CASE("existence loss") {
  CHECK(loss_ext(Tensor::full({3}, 0.5), std::vector<int>{1, 0, 1}).item() == doctest::Approx(std::log(2.0)));
  CHECK(loss_ext(Tensor({2}, {1, 0}), std::vector<int>{1, 0}).item() <= 2e-7);
  const Real expected = (-std::log(0.9) - std::log(0.6) - std::log(0.8)) / 3;
  CHECK(loss_ext(Tensor({3}, {0.9, 0.6, 0.2}), std::vector<int>{1, 1, 0}).item() ==
        doctest::Approx(expected).epsilon(1e-14));
  CHECK_THROWS_AS(loss_ext(Tensor({2}, {0.5, 0.5}), std::vector<int>{1, 0, 1}), LossError);
}

TEST_CASE("distillation loss") {
  std::mt19937_64 rng(22);
  const std::vector<Tensor> oracle_e{oracle::random_tensor({3, 4}, rng), oracle::random_tensor({3, 4}, rng)};
  const PitResult pit = identity_pit(2);
  CHECK(loss_dis(oracle_e, oracle_e, pit).item() == 0);

  const Real delta = 0.7;
  const Real u[] = {0.6, 0, 0.8};
  std::vector<Tensor> shifted;
  for (const auto& e : oracle_e) {
    Tensor s = e.clone();
    for (std::size_t d = 0; d < 3; ++d)
      for (std::size_t t = 0; t < 4; ++t) s.mutable_data()[d * 4 + t] += delta * u[d];
    shifted.push_back(s);
  }
  CHECK(loss_dis(shifted, oracle_e, pit).item() == doctest::Approx(delta).epsilon(1e-12));

  const std::vector<Tensor> a{oracle::random_tensor({2, 2}, rng), oracle::random_tensor({2, 2}, rng)};
  const std::vector<Tensor> b{oracle::random_tensor({2, 2}, rng), oracle::random_tensor({2, 2}, rng)};
  PitResult swap = identity_pit(2);
  swap.permutation = {1, 0};
  Real expected = 0;
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t t = 0; t < 2; ++t) {
      const Real dx = b[r].at(0, t) - a[1 - r].at(0, t), dy = b[r].at(1, t) - a[1 - r].at(1, t);
      expected += std::sqrt(dx * dx + dy * dy);
    }
  CHECK(loss_dis(a, b, swap).item() == doctest::Approx(expected / 4).epsilon(1e-14));

  // no gradient reaches the oracle
  Tensor target = oracle_e[0].clone();
  target.set_requires_grad(true);
  Tensor est = shifted[0].clone();
  est.set_requires_grad(true);
  ad::Tape tape;
  tape.backward(loss_dis(std::vector<Tensor>{est}, std::vector<Tensor>{target}, identity_pit(1)));
  CHECK_FALSE(target.has_grad());
  CHECK(est.has_grad());
}

TEST_CASE("orthogonality loss constructions") {
  const Tensor e1({2, 3}, {1, 1, 1, 0, 0, 0});
  const Tensor e2({2, 3}, {0, 0, 0, 2, 2, 2});
  const std::vector<Tensor> orth{e1, e2};
  CHECK(std::abs(loss_ort(orth, prototypes(orth), identity_pit(2)).item()) <= 1e-9);
  const std::vector<Tensor> same{e1, e1};
  CHECK(loss_ort(same, prototypes(same), identity_pit(2)).item() == doctest::Approx(1).epsilon(1e-9));

  const Tensor a({2, 1}, {1, 0});
  const Tensor b({2, 1}, {1 / std::sqrt(2.0), 1 / std::sqrt(2.0)});
  const std::vector<Tensor> plane{a, b};
  CHECK(loss_ort(plane, prototypes(plane), identity_pit(2)).item() == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(loss_ort(std::vector<Tensor>{a}, prototypes(std::vector<Tensor>{a}), identity_pit(1)).item() == 0);
}

TEST_CASE("sparsity loss") {
  const std::size_t one[] = {0};
  CHECK(loss_spa(std::vector<Tensor>{Tensor::zeros({4, 3})}, one).item() == 0);
  CHECK(loss_spa(std::vector<Tensor>{Tensor::full({4, 3}, 1)}, one).item() == 4);
  CHECK(loss_spa(std::vector<Tensor>{Tensor({3, 1}, {1, -2, 0.5})}, one).item() == 3.5);
}

TEST_CASE("weighted total") {
  const LossWeights w;
  CHECK(weighted_total({1, 1, 1, 1, 1}, w) == doctest::Approx(3.51101).epsilon(1e-14));
  LossWeights twice{2, 2e-2, 5, 2e-3, 2e-5};
  const LossValues v{0.3, 0.2, 0.7, 0.1, 4};
  CHECK(weighted_total(v, twice) == doctest::Approx(2 * weighted_total(v, w)).epsilon(1e-14));
  LossWeights sd{1, 0, 0, 0, 0};
  CHECK(weighted_total(v, sd) == 0.3);
  LossWeights bad;
  bad.ort = -1;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("loss_total with only the diarization weight equals loss_diar") {
  const EendDemux model(oracle::tiny_model(2, 4), 3);
  std::mt19937_64 rng(8);
  const Tensor x = oracle::random_tensor({4, 6}, rng);
  const Tensor y({6, 2}, {1, 0, 1, 1, 0, 1, 0, 0, 1, 0, 0, 1});
  const MixtureSample s = mix_sources("s", {x, x}, y, {0, 1});
  const auto fw = model.forward(s.features);
  const auto b = loss_total(fw, s, {}, LossWeights{1, 0, 0, 0, 0});
  CHECK(b.total.item() == loss_diar(fw.output.posteriors, s.labels, all2).loss.item());

  const MixtureSample empty = mix_sources("e", {x, x}, Tensor::zeros({6, 2}), {0, 1});
  const auto e = loss_total(model.forward(empty.features), empty, {}, LossWeights{});
  CHECK_FALSE(e.has_speakers);
  CHECK(e.total.item() == doctest::Approx(1e-2 * e.values.ext).epsilon(1e-14));
}

TEST_CASE("gradient suite on every loss component") {
  for (const char* name : {"loss_diar", "loss_ext", "loss_dis", "loss_ort", "loss_spa"}) {
    for (const auto& c : run_gradcheck(name, 3)) {
      CAPTURE(c.name);
      CHECK_MESSAGE(c.report.passed, c.report.summary());
    }
  }
  CHECK_THROWS(run_gradcheck("no_such_component"));
}
