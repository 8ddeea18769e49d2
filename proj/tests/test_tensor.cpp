#include <doctest.h>

#include <cmath>
#include <random>

#include "demux/gradcheck.hpp"
#include "demux/ops.hpp"
#include "oracles.hpp"

using namespace demux::ad;

namespace {

Real grad_of(const std::function<Tensor(const Tensor&)>& f, Real x0) {
  Tensor x = Tensor::scalar(x0, true);
  Tape tape;
  tape.backward(f(x));
  return x.grad().item();
}

// x^2 whose backward claims 3x instead of 2x.
Tensor broken_square(const Tensor& x) {
  std::vector<Real> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  Tensor y(x.shape(), out, x.requires_grad());
  if (Tape* tape = Tape::active(); tape && x.requires_grad()) {
    auto xn = x.node();
    tape->record({xn}, y.node(), [xn](Node& o) {
      for (std::size_t i = 0; i < o.value.size(); ++i) xn->accumulate_grad(i, o.grad[i] * 3 * xn->value[i]);
    });
  }
  return y;
}

}  // namespace

TEST_CASE("analytic values of basic ops") {
  CHECK(sigmoid(Tensor::scalar(0)).item() == 0.5);
  std::mt19937_64 rng(3);
  const Tensor m = oracle::random_tensor({3, 3}, rng);
  const Tensor p = matmul(Tensor::eye(3), m);
  for (std::size_t i = 0; i < 9; ++i) CHECK(p[i] == m[i]);
  const Tensor s = softmax(Tensor({3, 1}, {1, 1, 1}), 0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("analytic derivatives") {
  CHECK(grad_of([](const Tensor& x) { return x * x; }, 3) == doctest::Approx(6));
  CHECK(grad_of([](const Tensor& x) { return sigmoid(x); }, 0) == doctest::Approx(0.25));
  Tensor x({2}, {1, -2}, true);
  Tape tape;
  tape.backward(mean(abs(x)));
  CHECK(x.grad()[0] == doctest::Approx(0.5));
  CHECK(x.grad()[1] == doctest::Approx(-0.5));
}

TEST_CASE("abs subgradient at zero is zero") {
  CHECK(grad_of([](const Tensor& x) { return abs(x); }, 0) == 0);
  CHECK(grad_of([](const Tensor& x) { return relu(x); }, 0) == 0);
}

TEST_CASE("tape replays in reverse insertion order and only once") {
  Tensor x = Tensor::scalar(2, true);
  Tape tape;
  const Tensor y = exp(x * x) + x;
  std::vector<std::size_t> visited;
  tape.set_visit_observer([&](std::size_t i) { visited.push_back(i); });
  tape.backward(y);
  REQUIRE(visited.size() == tape.size());
  for (std::size_t i = 0; i < visited.size(); ++i) CHECK(visited[i] == visited.size() - 1 - i);
  CHECK(x.grad().item() == doctest::Approx(2 * 2 * std::exp(4.0) + 1));
  CHECK_THROWS_AS(tape.backward(y), TapeError);
}

TEST_CASE("no recording without an active tape or without requires_grad") {
  Tensor a = Tensor::scalar(1, true);
  const Tensor b = a * a;
  CHECK(Tape::active() == nullptr);
  Tape tape;
  const Tensor c = Tensor::scalar(2) * Tensor::scalar(3);
  CHECK(tape.size() == 0);
  CHECK(c.item() == 6);
  (void)b;
}

TEST_CASE("shape and domain errors") {
  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), ShapeError);
  CHECK_THROWS_AS(log(Tensor::scalar(0)), DomainError);
  CHECK_THROWS_AS(sqrt(Tensor::scalar(-1)), DomainError);
  CHECK_THROWS_AS(conv1d(Tensor::zeros({2, 5}), Tensor::zeros({1, 2, 2}), Tensor::zeros({1})), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), ShapeError);
  Tape tape;
  Tensor v({2}, {1, 2}, true);
  CHECK_THROWS_AS(tape.backward(v), ShapeError);
}

TEST_CASE("finite differences: polynomial passes tightly, wrong backward fails") {
  std::mt19937_64 rng(7);
  const Tensor x = oracle::random_tensor({4}, rng);
  auto r = finite_diff_check([](const Tensor& t) { return sum(t * t); }, x.clone(), 1e-5, 1e-6);
  CHECK(r.passed);
  auto bad = finite_diff_check([](const Tensor& t) { return sum(broken_square(t)); }, x.clone(), 1e-5, 1e-4);
  CHECK_FALSE(bad.passed);
  CHECK(bad.max_rel_error > 0.3);
}

TEST_CASE("finite differences agree on every op") {
  std::mt19937_64 rng(11);
  const Tensor w = oracle::random_tensor({3, 4}, rng);
  const Tensor other = oracle::random_tensor({4, 5}, rng);
  const Tensor weights = oracle::random_tensor({4, 5}, rng);
  const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases = {
      {"matmul", [&](const Tensor& x) { return sum(matmul(w, x) * matmul(w, x)); }},
      {"transpose", [&](const Tensor& x) { return sum(matmul(transpose(x), x) * matmul(transpose(x), x)); }},
      {"softmax", [&](const Tensor& x) { return sum(softmax(x, 0) * weights); }},
      {"log_softmax", [&](const Tensor& x) { return sum(log_softmax(x, 1) * weights); }},
      {"sigmoid", [&](const Tensor& x) { return sum(sigmoid(x) * weights); }},
      {"exp", [&](const Tensor& x) { return sum(exp(x) * weights); }},
      {"log", [&](const Tensor& x) { return sum(log(add_scalar(x * x, 1)) * weights); }},
      {"sqrt", [&](const Tensor& x) { return sum(sqrt(add_scalar(x * x, 0.5)) * weights); }},
      {"div", [&](const Tensor& x) { return sum(div(weights, add_scalar(x * x, 1))); }},
      {"layer_norm", [&](const Tensor& x) { return sum(layer_norm(x, 0) * weights); }},
      {"l2_norm", [&](const Tensor& x) { return sum(l2_norm(x, 0)); }},
      {"cosine", [&](const Tensor& x) { return sum(cosine_similarity(x, other, 0)); }},
      {"mean_axis", [&](const Tensor& x) { return sum(mean(x * x, 1)); }},
      {"slice_concat", [&](const Tensor& x) {
         const Tensor parts[] = {slice(x, 1, 3, 5), slice(x, 1, 0, 3)};
         return sum(concat(parts, 1) * weights);
       }},
      {"expand", [&](const Tensor& x) { return sum(expand(slice(x, 1, 0, 1), 1, 5) * weights); }},
      {"gather", [&](const Tensor& x) {
         const std::size_t cols[] = {4, 0, 2, 0, 1};
         return sum(gather_columns(x, cols) * weights);
       }},
      {"reshape", [&](const Tensor& x) { return sum(reshape(x, {5, 4}) * reshape(weights, {5, 4})); }},
  };
  for (const auto& [name, f] : cases) {
    CAPTURE(name);
    const auto r = finite_diff_check(f, oracle::random_tensor({4, 5}, rng));
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("conv1d gradients and same-length output") {
  std::mt19937_64 rng(5);
  const Tensor x = oracle::random_tensor({3, 6}, rng);
  const Tensor b = oracle::random_tensor({2}, rng);
  const Tensor weights = oracle::random_tensor({2, 6}, rng);
  auto f = [&](const Tensor& w) { return sum(conv1d(x, w, b) * weights); };
  const auto r = finite_diff_check(f, oracle::random_tensor({2, 3, 3}, rng));
  CHECK_MESSAGE(r.passed, r.summary());
  CHECK(conv1d(x, oracle::random_tensor({2, 3, 5}, rng), b).shape() == Shape{2, 6});
}

TEST_CASE("conv1d matches a direct zero-padded sum") {
  std::mt19937_64 rng(6);
  const Tensor x = oracle::random_tensor({2, 5}, rng);
  const Tensor w = oracle::random_tensor({3, 2, 3}, rng);
  const Tensor b = oracle::random_tensor({3}, rng);
  const Tensor y = conv1d(x, w, b);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t t = 0; t < 5; ++t) {
      Real acc = b[o];
      for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t k = 0; k < 3; ++k) {
          const long src = static_cast<long>(t) + static_cast<long>(k) - 1;
          if (src >= 0 && src < 5) acc += w[(o * 2 + i) * 3 + k] * x[i * 5 + static_cast<std::size_t>(src)];
        }
      CHECK(y.at(o, t) == doctest::Approx(acc).epsilon(1e-12));
    }
}
