#pragma once

#include <map>
#include <random>
#include <string>

#include "demux/ops.hpp"

namespace demux::nn {

using ad::Real;
using ad::Shape;
using ad::Tensor;

// Named leaf tensors, iterated in name order.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Shape shape, std::mt19937_64& rng, Real bound);
  Tensor create_constant(const std::string& name, Shape shape, Real value);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  void erase_prefix(const std::string& prefix);

  const std::map<std::string, Tensor>& all() const { return params_; }
  std::size_t num_elements() const;
  void zero_grad();
  // Sets requires_grad on every parameter whose name starts with prefix.
  void set_trainable(const std::string& prefix, bool trainable);

 private:
  std::map<std::string, Tensor> params_;
};

// Runtime switches for one forward pass.
struct Context {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // needed only for dropout
};

Tensor apply_dropout(const Tensor& x, Real rate, const Context& ctx);

// y = W x + b on column vectors; x is in x N.
struct Linear {
  Tensor weight;  // out x in
  Tensor bias;    // out x 1

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       std::mt19937_64& rng);
  static Linear bind(const ParameterStore& store, const std::string& name);
  Tensor operator()(const Tensor& x) const;
};

// Normalization along `axis` followed by a per-row affine map. With axis 0
// on D x N this is layer normalization of each column; with axis 1 it
// normalizes each channel over time.
struct AffineNorm {
  Tensor gamma;  // D x 1
  Tensor beta;   // D x 1
  std::size_t axis = 0;
  Real eps = 1e-5;

  static AffineNorm create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t axis);
  static AffineNorm bind(const ParameterStore& store, const std::string& name, std::size_t axis);
  Tensor operator()(const Tensor& x) const;
};

struct MultiHeadAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;

  static MultiHeadAttention create(ParameterStore& store, const std::string& name, std::size_t dim,
                                   std::size_t heads, std::mt19937_64& rng);
  static MultiHeadAttention bind(const ParameterStore& store, const std::string& name, std::size_t heads);
  // queries: D x Nq, memory: D x Nk -> D x Nq.
  Tensor operator()(const Tensor& queries, const Tensor& memory) const;
};

struct FeedForward {
  Linear in, out;

  static FeedForward create(ParameterStore& store, const std::string& name, std::size_t dim, std::size_t hidden,
                            std::mt19937_64& rng);
  static FeedForward bind(const ParameterStore& store, const std::string& name);
  Tensor operator()(const Tensor& x, Real dropout, const Context& ctx) const;
};

struct Conv1d {
  Tensor weight;  // out x in x K
  Tensor bias;    // out

  static Conv1d create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                       std::size_t kernel, std::mt19937_64& rng);
  static Conv1d bind(const ParameterStore& store, const std::string& name);
  Tensor operator()(const Tensor& x) const { return ad::conv1d(x, weight, bias); }
};

}  // namespace demux::nn
