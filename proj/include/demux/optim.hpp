#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "demux/nn.hpp"

namespace demux {

using ad::Real;

// peak_lr * min(step / warmup, sqrt(warmup / step)); step counts from 1.
Real noam_lr(std::size_t step, std::size_t warmup_steps, Real peak_lr);

// Adam with bias correction over every trainable parameter of a store.
class Adam {
 public:
  explicit Adam(Real beta1 = 0.9, Real beta2 = 0.999, Real eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Applies one update using the accumulated gradients. Parameters without
  // requires_grad are skipped.
  void step(nn::ParameterStore& params, Real lr);

  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t n) { steps_ = n; }
  // Moment buffers as tensors named "adam.m.<param>" / "adam.v.<param>".
  std::map<std::string, ad::Tensor> state() const;
  void load_state(const std::map<std::string, ad::Tensor>& tensors);

 private:
  Real beta1_, beta2_, eps_;
  std::uint64_t steps_ = 0;
  std::map<std::string, std::vector<Real>> m_, v_;
};

}  // namespace demux
