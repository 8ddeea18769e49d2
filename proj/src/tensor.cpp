#include "demux/tensor.hpp"

#include <numeric>
#include <sstream>
#include <utility>

namespace demux::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

ShapeError::ShapeError(const std::string& op, const std::string& what)
    : std::invalid_argument(op + ": shape mismatch: " + what) {}

DomainError::DomainError(const std::string& op, const std::string& what)
    : std::domain_error(op + ": domain error: " + what) {}

void Node::accumulate_grad(std::size_t i, Real g) { grad_buffer()[i] += g; }

std::span<Real> Node::grad_buffer() {
  if (grad.empty()) grad.assign(value.size(), Real{0});
  return grad;
}

Tensor::Tensor() : node_(std::make_shared<Node>()) {
  node_->value.assign(1, Real{0});
}

Tensor::Tensor(Shape shape, std::vector<Real> values, bool requires_grad)
    : node_(std::make_shared<Node>()) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor", to_string(shape) + " holds " + std::to_string(numel(shape)) +
                                   " elements, got " + std::to_string(values.size()));
  }
  node_->shape = std::move(shape);
  node_->value = std::move(values);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return Tensor({}, {value}, requires_grad); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.mutable_data()[i * n + i] = 1;
  return t;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("extent", "axis " + std::to_string(axis) + " of " + to_string(shape()));
  return shape()[axis];
}

Real Tensor::item() const {
  if (size() != 1) throw ShapeError("item", "expected one element, got " + to_string(shape()));
  return node_->value[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at", "expected rank 2, got " + to_string(shape()));
  return node_->value[row * shape()[1] + col];
}

Tensor Tensor::grad() const {
  if (node_->grad.empty()) return zeros(shape());
  return Tensor(shape(), node_->grad);
}

Tensor Tensor::clone() const { return Tensor(shape(), node_->value, node_->requires_grad); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->value, false); }

namespace {
thread_local Tape* active_tape = nullptr;
}

Tape::Tape() : previous_(active_tape) { active_tape = this; }

Tape::~Tape() {
  if (active_tape == this) active_tape = previous_;
}

Tape* Tape::active() { return active_tape; }

void Tape::record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
                  BackwardFn backward) {
  if (consumed_) throw TapeError("tape already consumed by backward; run a new forward pass");
  records_.push_back({std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw TapeError("backward called twice on the same tape");
  if (loss.size() != 1) throw ShapeError("backward", "loss must be scalar, got " + to_string(loss.shape()));
  consumed_ = true;
  loss.node()->grad_buffer()[0] += 1;
  for (std::size_t i = records_.size(); i-- > 0;) {
    if (observer_) observer_(i);
    Record& r = records_[i];
    if (r.output->grad.empty()) continue;
    r.backward(*r.output);
  }
}

}  // namespace demux::ad
