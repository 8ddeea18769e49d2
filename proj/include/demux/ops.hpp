#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "demux/tensor.hpp"

// Differentiable ops. Elementwise binary ops require equal shapes, or one
// operand with a single element (scalar broadcast). Anything else needs an
// explicit expand(). Axis reductions keep the reduced axis with extent 1.
namespace demux::ad {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real offset);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Repeats a tensor whose `axis` extent is 1 to extent n.
Tensor expand(const Tensor& a, std::size_t axis, std::size_t n);
// Picks columns of a rank-2 tensor in the given order.
Tensor gather_columns(const Tensor& a, std::span<const std::size_t> columns);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& a, std::size_t axis);
Tensor log_softmax(const Tensor& a, std::size_t axis);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
// Subgradient 0 at 0.
Tensor abs(const Tensor& a);
// Gradient passes where lo <= a <= hi, zero outside.
Tensor clamp(const Tensor& a, Real lo, Real hi);

// Normalizes to zero mean, unit variance along `axis` (biased variance).
Tensor layer_norm(const Tensor& a, std::size_t axis, Real eps = 1e-5);
// sqrt(sum(a^2) + eps) along axis; with eps = 0 the subgradient at 0 is 0.
Tensor l2_norm(const Tensor& a, std::size_t axis, Real eps = 0);
Tensor l1_norm(const Tensor& a, std::size_t axis);
// <a,b> / (|a| |b|) along axis, each norm guarded by eps inside the root.
Tensor cosine_similarity(const Tensor& a, const Tensor& b, std::size_t axis, Real eps = 1e-8);

// Same-length 1-D convolution over the last axis.
// x: C_in x T, weight: C_out x C_in x K (K odd), bias: C_out.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias);

// While alive, records on this thread how close any input of relu, abs,
// clamp or an unguarded l2_norm came to a point where the op is not
// differentiable. Exact zeros fed to abs and l2_norm are ignored: they come
// from inactive ReLUs and do not move under small perturbations.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  Real min_distance() const { return min_; }
  static bool active();
  static void observe(Real distance);

 private:
  KinkMonitor* previous_;
  Real min_;
};

// Multiplies by a fixed 0/1 mask scaled by 1/(1-rate). The mask is not
// differentiated.
Tensor dropout_mask(const Tensor& a, std::span<const Real> mask, Real rate);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, Real s) { return scale(a, s); }
inline Tensor operator*(Real s, const Tensor& a) { return scale(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace demux::ad
