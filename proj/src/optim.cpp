#include "demux/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace demux {

Real noam_lr(std::size_t step, std::size_t warmup_steps, Real peak_lr) {
  if (step == 0) throw std::invalid_argument("noam_lr: step counts from 1");
  if (warmup_steps == 0) throw std::invalid_argument("noam_lr: warmup must be positive");
  const Real s = static_cast<Real>(step), w = static_cast<Real>(warmup_steps);
  return peak_lr * std::min(s / w, std::sqrt(w / s));
}

void Adam::step(nn::ParameterStore& params, Real lr) {
  ++steps_;
  const Real n = static_cast<Real>(steps_);
  const Real c1 = 1 - std::pow(beta1_, n), c2 = 1 - std::pow(beta2_, n);
  for (const auto& [name, param] : params.all()) {
    if (!param.requires_grad()) continue;
    ad::Tensor p = param;
    auto values = p.mutable_data();
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() != values.size()) {
      m.assign(values.size(), 0);
      v.assign(values.size(), 0);
    }
    if (!p.has_grad()) continue;
    const auto& g = p.node()->grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      values[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::map<std::string, ad::Tensor> Adam::state() const {
  std::map<std::string, ad::Tensor> out;
  for (const auto& [name, m] : m_) {
    out.emplace("adam.m." + name, ad::Tensor({m.size()}, m));
    out.emplace("adam.v." + name, ad::Tensor({m.size()}, v_.at(name)));
  }
  return out;
}

void Adam::load_state(const std::map<std::string, ad::Tensor>& tensors) {
  m_.clear();
  v_.clear();
  for (const auto& [key, t] : tensors) {
    if (key.starts_with("adam.m.")) m_[key.substr(7)].assign(t.data().begin(), t.data().end());
    if (key.starts_with("adam.v.")) v_[key.substr(7)].assign(t.data().begin(), t.data().end());
  }
}

}  // namespace demux
