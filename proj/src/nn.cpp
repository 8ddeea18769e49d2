#include "demux/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace demux::nn {

using namespace demux::ad;

Tensor ParameterStore::create(const std::string& name, Shape shape, std::mt19937_64& rng, Real bound) {
  if (contains(name)) throw std::logic_error("parameter '" + name + "' already exists");
  std::uniform_real_distribution<Real> dist(-bound, bound);
  std::vector<Real> values(numel(shape));
  for (auto& v : values) v = dist(rng);
  Tensor t(std::move(shape), std::move(values), true);
  params_.emplace(name, t);
  return t;
}

Tensor ParameterStore::create_constant(const std::string& name, Shape shape, Real value) {
  if (contains(name)) throw std::logic_error("parameter '" + name + "' already exists");
  Tensor t = Tensor::full(std::move(shape), value, true);
  params_.emplace(name, t);
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("no parameter named '" + name + "'");
  return it->second;
}

void ParameterStore::erase_prefix(const std::string& prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    it = it->first.starts_with(prefix) ? params_.erase(it) : std::next(it);
  }
}

std::size_t ParameterStore::num_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : params_) n += t.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, t] : params_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

void ParameterStore::set_trainable(const std::string& prefix, bool trainable) {
  for (auto& [name, t] : params_) {
    if (name.starts_with(prefix)) {
      Tensor handle = t;
      handle.set_requires_grad(trainable);
    }
  }
}

Tensor apply_dropout(const Tensor& x, Real rate, const Context& ctx) {
  if (!ctx.training || rate <= 0) return x;
  if (ctx.rng == nullptr) throw std::logic_error("dropout in training mode needs an rng");
  std::bernoulli_distribution keep(1 - rate);
  std::vector<Real> mask(x.size());
  for (auto& m : mask) m = keep(*ctx.rng) ? 1 : 0;
  return dropout_mask(x, mask, rate);
}

Linear Linear::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::mt19937_64& rng) {
  const Real bound = 1 / std::sqrt(static_cast<Real>(in));
  return {store.create(name + ".weight", {out, in}, rng, bound), store.create_constant(name + ".bias", {out, 1}, 0)};
}

Linear Linear::bind(const ParameterStore& store, const std::string& name) {
  return {store.get(name + ".weight"), store.get(name + ".bias")};
}

Tensor Linear::operator()(const Tensor& x) const {
  return matmul(weight, x) + expand(bias, 1, x.extent(1));
}

AffineNorm AffineNorm::create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t axis) {
  return {store.create_constant(name + ".gamma", {dim, 1}, 1), store.create_constant(name + ".beta", {dim, 1}, 0), axis};
}

AffineNorm AffineNorm::bind(const ParameterStore& store, const std::string& name, std::size_t axis) {
  return {store.get(name + ".gamma"), store.get(name + ".beta"), axis};
}

Tensor AffineNorm::operator()(const Tensor& x) const {
  const std::size_t n = x.extent(1);
  return layer_norm(x, axis, eps) * expand(gamma, 1, n) + expand(beta, 1, n);
}

MultiHeadAttention MultiHeadAttention::create(ParameterStore& store, const std::string& name, std::size_t dim,
                                              std::size_t heads, std::mt19937_64& rng) {
  return {Linear::create(store, name + ".query", dim, dim, rng), Linear::create(store, name + ".key", dim, dim, rng),
          Linear::create(store, name + ".value", dim, dim, rng), Linear::create(store, name + ".output", dim, dim, rng),
          heads};
}

MultiHeadAttention MultiHeadAttention::bind(const ParameterStore& store, const std::string& name, std::size_t heads) {
  return {Linear::bind(store, name + ".query"), Linear::bind(store, name + ".key"), Linear::bind(store, name + ".value"),
          Linear::bind(store, name + ".output"), heads};
}

Tensor MultiHeadAttention::operator()(const Tensor& queries, const Tensor& memory) const {
  const std::size_t dim = queries.extent(0);
  if (memory.extent(0) != dim) throw ShapeError("attention", to_string(queries.shape()) + " vs " + to_string(memory.shape()));
  const std::size_t head_dim = dim / heads;
  const Real scale = 1 / std::sqrt(static_cast<Real>(head_dim));
  const Tensor q = query(queries), k = key(memory), v = value(memory);
  std::vector<Tensor> outputs;
  outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    const Tensor qh = slice(q, 0, lo, hi), kh = slice(k, 0, lo, hi), vh = slice(v, 0, lo, hi);
    const Tensor weights = softmax(ad::scale(matmul(transpose(qh), kh), scale), 1);  // Nq x Nk
    outputs.push_back(matmul(vh, transpose(weights)));                             // dh x Nq
  }
  return output(concat(outputs, 0));
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                                std::mt19937_64& rng) {
  return {Linear::create(store, name + ".in", dim, hidden, rng), Linear::create(store, name + ".out", hidden, dim, rng)};
}

FeedForward FeedForward::bind(const ParameterStore& store, const std::string& name) {
  return {Linear::bind(store, name + ".in"), Linear::bind(store, name + ".out")};
}

Tensor FeedForward::operator()(const Tensor& x, Real dropout, const Context& ctx) const {
  return out(apply_dropout(relu(in(x)), dropout, ctx));
}

Conv1d Conv1d::create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                      std::size_t kernel, std::mt19937_64& rng) {
  const Real bound = 1 / std::sqrt(static_cast<Real>(in * kernel));
  return {store.create(name + ".weight", {out, in, kernel}, rng, bound), store.create_constant(name + ".bias", {out}, 0)};
}

Conv1d Conv1d::bind(const ParameterStore& store, const std::string& name) {
  return {store.get(name + ".weight"), store.get(name + ".bias")};
}

}  // namespace demux::nn
