#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace demux::ad {

#ifdef DEMUX_FLOAT32
using Real = float;
#else
using Real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const std::string& what);
};

// Raised when an op is evaluated outside its mathematical domain (log of a
// non-positive value, division by zero, ...). The message names the op.
class DomainError : public std::domain_error {
 public:
  DomainError(const std::string& op, const std::string& what);
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct Node {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;  // empty until something flows into it
  bool requires_grad = false;

  void accumulate_grad(std::size_t i, Real g);
  std::span<Real> grad_buffer();  // allocates zeros on first use
};

// Shared handle to a node. Copies alias the same storage; use clone() for a
// deep copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t size() const { return node_->value.size(); }
  bool is_scalar() const { return size() == 1; }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  Real item() const;
  Real operator[](std::size_t i) const { return node_->value[i]; }
  Real at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  // Zero-filled when nothing has flowed into this tensor.
  Tensor grad() const;
  void zero_grad() { node_->grad.clear(); }

  Tensor clone() const;   // deep copy, keeps requires_grad
  Tensor detach() const;  // deep copy, never requires grad

  const std::shared_ptr<Node>& node() const { return node_; }
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  std::shared_ptr<Node> node_;
};

// Define-by-run tape. Constructing a Tape makes it the active tape of the
// calling thread until it is destroyed; ops whose inputs require grad are
// recorded on it. Without an active tape ops only compute values.
class Tape {
 public:
  using BackwardFn = std::function<void(Node& out)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  void record(std::vector<std::shared_ptr<Node>> inputs, std::shared_ptr<Node> output,
              BackwardFn backward);

  // Seeds d(loss)/d(loss) = 1 and replays records in reverse insertion order.
  // A tape can be consumed once.
  void backward(const Tensor& loss);

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  // Test hook: called with the record index as each record is replayed.
  void set_visit_observer(std::function<void(std::size_t)> observer) {
    observer_ = std::move(observer);
  }

 private:
  struct Record {
    std::vector<std::shared_ptr<Node>> inputs;
    std::shared_ptr<Node> output;
    BackwardFn backward;
  };
  std::vector<Record> records_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
  std::function<void(std::size_t)> observer_;
};

}  // namespace demux::ad
