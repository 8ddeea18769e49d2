#include "demux/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>

#include "demux/losses.hpp"
#include "demux/model.hpp"
#include "demux/nn.hpp"
#include "demux/speaker_encoder.hpp"

namespace demux {

using namespace demux::ad;

namespace {

constexpr std::size_t kD = 8, kT = 6, kS = 3;
constexpr std::size_t kMaxDraws = 25;
constexpr Real kKinkMargin = 1e-4;

Tensor random(Shape shape, std::mt19937_64& rng, Real lo = -1, Real hi = 1) {
  std::uniform_real_distribution<Real> u(lo, hi);
  std::vector<Real> v(numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

Tensor random_labels(std::size_t t, std::size_t s, std::mt19937_64& rng) {
  std::bernoulli_distribution on(0.5);
  std::vector<Real> v(t * s);
  for (auto& x : v) x = on(rng) ? 1 : 0;
  return Tensor({t, s}, std::move(v));
}

// Splits D x (T*S) into S blocks of D x T.
std::vector<Tensor> split_speakers(const Tensor& x, std::size_t speakers) {
  const std::size_t t = x.extent(1) / speakers;
  std::vector<Tensor> out;
  for (std::size_t s = 0; s < speakers; ++s) out.push_back(slice(x, 1, s * t, (s + 1) * t));
  return out;
}

std::vector<std::size_t> random_valid(std::mt19937_64& rng) {
  std::vector<std::size_t> all(kS);
  std::iota(all.begin(), all.end(), 0);
  std::shuffle(all.begin(), all.end(), rng);
  const std::size_t n = 2 + rng() % (kS - 1);
  std::vector<std::size_t> v(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(v.begin(), v.end());
  return v;
}

PitResult random_pit(std::mt19937_64& rng) {
  PitResult pit;
  pit.valid = random_valid(rng);
  pit.permutation.resize(pit.valid.size());
  std::iota(pit.permutation.begin(), pit.permutation.end(), 0);
  std::shuffle(pit.permutation.begin(), pit.permutation.end(), rng);
  return pit;
}

using Runner = std::function<std::vector<GradCheckCase>(std::mt19937_64&, Real, Real)>;

GradCheckCase check(const std::string& name, const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps,
                    Real tol) {
  GradCheckCase c{name, {}};
  {
    KinkMonitor monitor;
    f(x);
    c.kink_margin = monitor.min_distance();
  }
  c.report = finite_diff_check(f, x, eps, tol);
  return c;
}

std::vector<GradCheckCase> op_cases(const std::string& name, std::mt19937_64& rng, Real eps, Real tol) {
  const Tensor w = random({kD, kT}, rng);  // fixed projection turning outputs into a scalar
  auto project = [w](const Tensor& y) { return sum(y * w); };
  if (name == "matmul") {
    const Tensor b = random({5, kT}, rng);
    return {check(name, [&](const Tensor& a) { return project(matmul(a, b)); }, random({kD, 5}, rng), eps, tol)};
  }
  if (name == "softmax")
    return {check(name, [&](const Tensor& a) { return project(softmax(a, 0)); }, random({kD, kT}, rng), eps, tol)};
  if (name == "log_softmax")
    return {check(name, [&](const Tensor& a) { return project(log_softmax(a, 1)); }, random({kD, kT}, rng), eps, tol)};
  if (name == "layer_norm")
    return {check(name, [&](const Tensor& a) { return project(layer_norm(a, 0)); }, random({kD, kT}, rng), eps, tol)};
  if (name == "conv1d") {
    const Tensor x = random({4, kT}, rng), kernel = random({kD, 4, 3}, rng), bias = random({kD}, rng);
    return {check(name, [&](const Tensor& k) { return project(conv1d(x, k, bias)); }, kernel.clone(), eps, tol),
            check(name + ".input", [&](const Tensor& in) { return project(conv1d(in, kernel, bias)); }, x, eps, tol)};
  }
  if (name == "cosine") {
    const Tensor b = random({kD, kT}, rng);
    const Tensor v = random({1, kT}, rng);
    return {check(name, [&](const Tensor& a) { return sum(cosine_similarity(a, b, 0) * v); }, random({kD, kT}, rng), eps,
                  tol)};
  }
  if (name == "attention") {
    nn::ParameterStore store;
    const auto mha = nn::MultiHeadAttention::create(store, "mha", kD, 2, rng);
    const Tensor memory = random({kD, kT}, rng), queries = random({kD, kS}, rng);
    const Tensor w3 = random({kD, kS}, rng);
    return {check(name + ".queries", [&](const Tensor& q) { return sum(mha(q, memory) * w3); }, queries.clone(), eps, tol),
            check(name + ".memory", [&](const Tensor& m) { return sum(mha(queries, m) * w3); }, memory, eps, tol)};
  }
  throw std::invalid_argument("unknown op " + name);
}

std::vector<GradCheckCase> loss_diar_case(std::mt19937_64& rng, Real eps, Real tol) {
  const Tensor labels = random_labels(kT, kS, rng);
  const auto valid = random_valid(rng);
  const Tensor logits = random({kT, kS}, rng, -2, 2);
  const auto perm = loss_diar(sigmoid(logits), labels, valid).permutation;
  return {check("loss_diar", [&](const Tensor& x) { return loss_diar(sigmoid(x), labels, valid, perm).loss; }, logits,
                eps, tol)};
}

std::vector<GradCheckCase> loss_ext_case(std::mt19937_64& rng, Real eps, Real tol) {
  std::vector<int> labels(kS);
  for (auto& l : labels) l = static_cast<int>(rng() % 2);
  return {check("loss_ext", [&](const Tensor& x) { return loss_ext(sigmoid(x), labels); }, random({kS}, rng, -2, 2), eps,
                tol)};
}

std::vector<GradCheckCase> embedding_loss_case(const std::string& name, std::mt19937_64& rng, Real eps, Real tol) {
  const PitResult pit = random_pit(rng);
  std::vector<Tensor> oracle;
  for (std::size_t s = 0; s < kS; ++s) oracle.push_back(random({kD, kT}, rng));
  const Tensor x = random({kD, kT * kS}, rng);
  std::function<Tensor(const Tensor&)> f;
  if (name == "loss_dis") {
    f = [&](const Tensor& e) { return loss_dis(split_speakers(e, kS), oracle, pit); };
  } else if (name == "loss_ort") {
    f = [&](const Tensor& e) {
      const auto parts = split_speakers(e, kS);
      return loss_ort(parts, prototypes(parts), pit);
    };
  } else {
    f = [&](const Tensor& e) { return loss_spa(split_speakers(e, kS), pit.valid); };
  }
  return {check(name, f, x, eps, tol)};
}

// Weighted objective of a small model, checked against every parameter.
std::vector<GradCheckCase> loss_total_case(std::mt19937_64& rng, Real eps, Real tol) {
  ModelConfig cfg;
  cfg.feature_dim = 4;
  cfg.embed_dim = kD;
  cfg.max_speakers = kS;
  cfg.encoder_blocks = 1;
  cfg.decoder_blocks = 1;
  cfg.attention_heads = 2;
  cfg.ffn_dim = 16;
  cfg.demux_cnn_stacks = 1;
  cfg.demux_kernel_size = 3;
  EendDemux model(cfg, rng());
  // Zero biases and unit gains are special points (a silent frame would hit
  // layer normalization with zero variance), so move every parameter.
  std::uniform_real_distribution<Real> jitter(-0.3, 0.3);
  for (const auto& [name, param] : model.parameters().all()) {
    Tensor p = param;
    for (auto& v : p.mutable_data()) v += jitter(rng);
  }
  SpeakerEncoder encoder(cfg, rng());
  encoder.freeze();

  Tensor labels = random_labels(kT, kS, rng);
  std::vector<int> ids(kS, -1);
  // Guarantee at least two present speakers so every term is active.
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t t = 0; t < kT; ++t)
      if (t == s) labels.mutable_data()[t * kS + s] = 1;
  std::vector<Tensor> sources;
  for (std::size_t s = 0; s < kS; ++s) sources.push_back(random({cfg.feature_dim, kT}, rng));
  for (std::size_t s = 0; s < kS; ++s) ids[s] = static_cast<int>(s);
  const MixtureSample sample = mix_sources("gradcheck", sources, labels, ids);
  std::vector<Tensor> oracle;
  for (std::size_t s = 0; s < kS; ++s) oracle.push_back(encoder.encode(sample.sources[s]).detach());

  const LossWeights weights;
  const auto perm = loss_total(model.forward(sample.features), sample, oracle, weights).permutation;
  auto objective = [&](const Tensor&) { return loss_total(model.forward(sample.features), sample, oracle, weights, perm).total; };

  std::vector<GradCheckCase> cases;
  for (const auto& [name, param] : model.parameters().all()) {
    cases.push_back(check("loss_total." + name, objective, param, eps, tol));
  }
  model.parameters().zero_grad();
  return cases;
}

const std::vector<std::pair<std::string, Runner>>& registry() {
  static const std::vector<std::pair<std::string, Runner>> r = [] {
    std::vector<std::pair<std::string, Runner>> v;
    for (const char* op : {"matmul", "softmax", "log_softmax", "layer_norm", "conv1d", "cosine", "attention"}) {
      const std::string name = op;
      v.emplace_back(name, [name](std::mt19937_64& rng, Real eps, Real tol) { return op_cases(name, rng, eps, tol); });
    }
    v.emplace_back("loss_diar", loss_diar_case);
    v.emplace_back("loss_ext", loss_ext_case);
    for (const char* loss : {"loss_dis", "loss_ort", "loss_spa"}) {
      const std::string name = loss;
      v.emplace_back(name, [name](std::mt19937_64& rng, Real eps, Real tol) {
        return embedding_loss_case(name, rng, eps, tol);
      });
    }
    v.emplace_back("loss_total", loss_total_case);
    return v;
  }();
  return r;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> names;
  for (const auto& [name, _] : registry()) names.push_back(name);
  return names;
}

std::vector<GradCheckCase> run_gradcheck(const std::string& component, std::uint64_t seed, Real eps, Real tol) {
  std::vector<GradCheckCase> out;
  bool found = false;
  for (const auto& [name, runner] : registry()) {
    if (component != "all" && component != name) continue;
    found = true;
    std::mt19937_64 rng(seed);
    std::vector<GradCheckCase> cases;
    std::size_t redraws = 0;
    for (;; ++redraws) {
      cases = runner(rng, eps, tol);
      const bool kinked =
          std::any_of(cases.begin(), cases.end(), [](const auto& c) { return c.kink_margin < kKinkMargin; });
      if (!kinked || redraws + 1 == kMaxDraws) break;
    }
    for (auto& c : cases) {
      c.redraws = redraws;
      out.push_back(std::move(c));
    }
  }
  if (!found) throw std::invalid_argument("unknown gradcheck component '" + component + "'");
  return out;
}

}  // namespace demux
