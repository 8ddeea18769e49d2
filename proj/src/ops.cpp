#include "demux/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace demux::ad {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using NodePtr = std::shared_ptr<Node>;

Tensor finish(Shape shape, std::vector<Real> values, std::initializer_list<Tensor> inputs,
              Tape::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  std::vector<NodePtr> nodes;
  for (const auto& t : inputs) nodes.push_back(t.node());
  tape->record(std::move(nodes), out.node(), std::move(backward));
  return out;
}

Tensor finish(Shape shape, std::vector<Real> values, std::span<const Tensor> inputs,
              Tape::BackwardFn backward) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = Tape::active();
  if (tape == nullptr) return out;
  bool any = false;
  for (const auto& t : inputs) any = any || t.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  std::vector<NodePtr> nodes;
  for (const auto& t : inputs) nodes.push_back(t.node());
  tape->record(std::move(nodes), out.node(), std::move(backward));
  return out;
}

// Decomposes a shape around one axis so element (o, k, i) sits at
// (o * n + k) * inner + i.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
  std::size_t index(std::size_t o, std::size_t k, std::size_t i) const { return (o * n + k) * inner + i; }
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw ShapeError(op, "axis " + std::to_string(axis) + " out of range for " + to_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(Shape shape, std::size_t axis) {
  shape[axis] = 1;
  return shape;
}

void require_rank(const Tensor& a, std::size_t rank, const char* op) {
  if (a.rank() != rank) {
    throw ShapeError(op, "expected rank " + std::to_string(rank) + ", got " + to_string(a.shape()));
  }
}

template <typename Fwd, typename Da, typename Db>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Da da, Db db) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(op, to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = numel(shape);
  std::vector<Real> out(n);
  auto av = a.data();
  auto bv = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[a_scalar ? 0 : i], bv[b_scalar ? 0 : i]);
  NodePtr an = a.node(), bn = b.node();
  return finish(shape, std::move(out), {a, b}, [an, bn, a_scalar, b_scalar, da, db](Node& o) {
    const std::size_t m = o.value.size();
    for (std::size_t i = 0; i < m; ++i) {
      const Real x = an->value[a_scalar ? 0 : i];
      const Real y = bn->value[b_scalar ? 0 : i];
      const Real g = o.grad[i];
      if (an->requires_grad) an->accumulate_grad(a_scalar ? 0 : i, g * da(x, y, o.value[i]));
      if (bn->requires_grad) bn->accumulate_grad(b_scalar ? 0 : i, g * db(x, y, o.value[i]));
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  std::vector<Real> out(a.size());
  auto av = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i]);
  NodePtr an = a.node();
  return finish(a.shape(), std::move(out), {a}, [an, deriv](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * deriv(an->value[i], o.value[i]);
  });
}

Real stable_sigmoid(Real x) {
  if (x >= 0) return Real{1} / (Real{1} + std::exp(-x));
  const Real e = std::exp(x);
  return e / (Real{1} + e);
}

Real sign_of(Real x) { return x > 0 ? Real{1} : (x < 0 ? Real{-1} : Real{0}); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "add", [](Real x, Real y) { return x + y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{1}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "sub", [](Real x, Real y) { return x - y; }, [](Real, Real, Real) { return Real{1}; },
      [](Real, Real, Real) { return Real{-1}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      a, b, "mul", [](Real x, Real y) { return x * y; }, [](Real, Real y, Real) { return y; },
      [](Real x, Real, Real) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (Real v : b.data()) {
    if (v == 0) throw DomainError("div", "division by zero");
  }
  return binary(
      a, b, "div", [](Real x, Real y) { return x / y; }, [](Real, Real y, Real) { return Real{1} / y; },
      [](Real, Real y, Real out) { return -out / y; });
}

Tensor scale(const Tensor& a, Real factor) {
  return unary(a, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& a, Real offset) {
  return unary(a, [offset](Real x) { return x + offset; }, [](Real, Real) { return Real{1}; });
}

Tensor neg(const Tensor& a) { return scale(a, -1); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) throw ShapeError("matmul", to_string(a.shape()) + " x " + to_string(b.shape()));
  std::vector<Real> out(m * n);
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  NodePtr an = a.node(), bn = b.node();
  return finish({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](Node& o) {
    ConstMap dy(o.grad.data(), m, n);
    if (an->requires_grad) {
      MutMap(an->grad_buffer().data(), m, k).noalias() += dy * ConstMap(bn->value.data(), k, n).transpose();
    }
    if (bn->requires_grad) {
      MutMap(bn->grad_buffer().data(), k, n).noalias() += ConstMap(an->value.data(), m, k).transpose() * dy;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.extent(0), c = a.extent(1);
  std::vector<Real> out(r * c);
  MutMap(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  NodePtr an = a.node();
  return finish({c, r}, std::move(out), {a}, [an, r, c](Node& o) {
    MutMap(an->grad_buffer().data(), r, c) += ConstMap(o.grad.data(), c, r).transpose();
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) throw ShapeError("reshape", to_string(a.shape()) + " -> " + to_string(shape));
  NodePtr an = a.node();
  std::vector<Real> out(a.data().begin(), a.data().end());
  return finish(std::move(shape), std::move(out), {a}, [an](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw ShapeError("concat", "axis out of range for " + to_string(first));
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat", to_string(first) + " vs " + to_string(s));
    shape[axis] += s[axis];
    s[axis] = first[axis];
    if (s != first) throw ShapeError("concat", to_string(first) + " vs " + to_string(p.shape()));
  }
  const AxisSplit out_split = split_axis(shape, axis, "concat");
  std::vector<Real> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const AxisSplit ps = split_axis(p.shape(), axis, "concat");
    auto pv = p.data();
    for (std::size_t o = 0; o < ps.outer; ++o)
      for (std::size_t k = 0; k < ps.n; ++k)
        std::copy_n(pv.begin() + ps.index(o, k, 0), ps.inner, out.begin() + out_split.index(o, offset + k, 0));
    offset += ps.n;
  }
  std::vector<NodePtr> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return finish(shape, std::move(out), parts, [nodes, offsets, out_split, axis](Node& o) {
    for (std::size_t j = 0; j < nodes.size(); ++j) {
      Node& in = *nodes[j];
      if (!in.requires_grad) continue;
      const AxisSplit ps = split_axis(in.shape, axis, "concat");
      auto g = in.grad_buffer();
      for (std::size_t ou = 0; ou < ps.outer; ++ou)
        for (std::size_t k = 0; k < ps.n; ++k)
          for (std::size_t i = 0; i < ps.inner; ++i)
            g[ps.index(ou, k, i)] += o.grad[out_split.index(ou, offsets[j] + k, i)];
    }
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  const AxisSplit in = split_axis(a.shape(), axis, "slice");
  if (begin > end || end > in.n) {
    throw ShapeError("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                                  to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = end - begin;
  const AxisSplit os = split_axis(shape, axis, "slice");
  std::vector<Real> out(numel(shape));
  auto av = a.data();
  for (std::size_t o = 0; o < in.outer; ++o)
    for (std::size_t k = 0; k < os.n; ++k)
      std::copy_n(av.begin() + in.index(o, begin + k, 0), in.inner, out.begin() + os.index(o, k, 0));
  NodePtr an = a.node();
  return finish(shape, std::move(out), {a}, [an, in, os, begin](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < in.outer; ++ou)
      for (std::size_t k = 0; k < os.n; ++k)
        for (std::size_t i = 0; i < in.inner; ++i) g[in.index(ou, begin + k, i)] += o.grad[os.index(ou, k, i)];
  });
}

Tensor expand(const Tensor& a, std::size_t axis, std::size_t n) {
  const AxisSplit in = split_axis(a.shape(), axis, "expand");
  if (in.n != 1) throw ShapeError("expand", "axis " + std::to_string(axis) + " of " + to_string(a.shape()) + " is not 1");
  Shape shape = a.shape();
  shape[axis] = n;
  const AxisSplit os = split_axis(shape, axis, "expand");
  std::vector<Real> out(numel(shape));
  auto av = a.data();
  for (std::size_t o = 0; o < os.outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(av.begin() + in.index(o, 0, 0), os.inner, out.begin() + os.index(o, k, 0));
  NodePtr an = a.node();
  return finish(shape, std::move(out), {a}, [an, in, os](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < os.outer; ++ou)
      for (std::size_t k = 0; k < os.n; ++k)
        for (std::size_t i = 0; i < os.inner; ++i) g[in.index(ou, 0, i)] += o.grad[os.index(ou, k, i)];
  });
}

Tensor gather_columns(const Tensor& a, std::span<const std::size_t> columns) {
  require_rank(a, 2, "gather_columns");
  const std::size_t rows = a.extent(0), cols = a.extent(1), n = columns.size();
  for (auto c : columns) {
    if (c >= cols) throw ShapeError("gather_columns", "column " + std::to_string(c) + " of " + to_string(a.shape()));
  }
  std::vector<std::size_t> picked(columns.begin(), columns.end());
  std::vector<Real> out(rows * n);
  auto av = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = av[r * cols + picked[j]];
  NodePtr an = a.node();
  return finish({rows, n}, std::move(out), {a}, [an, picked, rows, cols](Node& o) {
    auto g = an->grad_buffer();
    const std::size_t n = picked.size();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) g[r * cols + picked[j]] += o.grad[r * n + j];
  });
}

Tensor sum(const Tensor& a) {
  Real total = 0;
  for (Real v : a.data()) total += v;
  NodePtr an = a.node();
  return finish({}, {total}, {a}, [an](Node& o) {
    auto g = an->grad_buffer();
    for (auto& x : g) x += o.grad[0];
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "sum");
  std::vector<Real> out(s.outer * s.inner, Real{0});
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[s.index(o, k, i)];
  NodePtr an = a.node();
  return finish(reduced_shape(a.shape(), axis), std::move(out), {a}, [an, s](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < s.outer; ++ou)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t i = 0; i < s.inner; ++i) g[s.index(ou, k, i)] += o.grad[ou * s.inner + i];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean", "empty tensor");
  return scale(sum(a), Real{1} / static_cast<Real>(a.size()));
}

Tensor mean(const Tensor& a, std::size_t axis) {
  const std::size_t n = a.extent(axis);
  if (n == 0) throw ShapeError("mean", "empty axis");
  return scale(sum(a, axis), Real{1} / static_cast<Real>(n));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "softmax");
  std::vector<Real> out(a.size());
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, av[s.index(o, k, i)]);
      Real z = 0;
      for (std::size_t k = 0; k < s.n; ++k) z += (out[s.index(o, k, i)] = std::exp(av[s.index(o, k, i)] - mx));
      for (std::size_t k = 0; k < s.n; ++k) out[s.index(o, k, i)] /= z;
    }
  }
  NodePtr an = a.node();
  return finish(a.shape(), std::move(out), {a}, [an, s](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        Real dot = 0;
        for (std::size_t k = 0; k < s.n; ++k) dot += o.grad[s.index(ou, k, i)] * o.value[s.index(ou, k, i)];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = s.index(ou, k, i);
          g[j] += o.value[j] * (o.grad[j] - dot);
        }
      }
    }
  });
}

Tensor log_softmax(const Tensor& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "log_softmax");
  std::vector<Real> out(a.size());
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t k = 0; k < s.n; ++k) mx = std::max(mx, av[s.index(o, k, i)]);
      Real z = 0;
      for (std::size_t k = 0; k < s.n; ++k) z += std::exp(av[s.index(o, k, i)] - mx);
      const Real lse = mx + std::log(z);
      for (std::size_t k = 0; k < s.n; ++k) out[s.index(o, k, i)] = av[s.index(o, k, i)] - lse;
    }
  }
  NodePtr an = a.node();
  return finish(a.shape(), std::move(out), {a}, [an, s](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        Real total = 0;
        for (std::size_t k = 0; k < s.n; ++k) total += o.grad[s.index(ou, k, i)];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = s.index(ou, k, i);
          g[j] += o.grad[j] - std::exp(o.value[j]) * total;
        }
      }
    }
  });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](Real, Real y) { return y * (Real{1} - y); });
}

namespace {
thread_local KinkMonitor* g_kink_monitor = nullptr;
}

KinkMonitor::KinkMonitor() : previous_(g_kink_monitor), min_(std::numeric_limits<Real>::infinity()) {
  g_kink_monitor = this;
}

KinkMonitor::~KinkMonitor() { g_kink_monitor = previous_; }

bool KinkMonitor::active() { return g_kink_monitor != nullptr; }

void KinkMonitor::observe(Real distance) {
  for (KinkMonitor* m = g_kink_monitor; m; m = m->previous_) m->min_ = std::min(m->min_, distance);
}

Tensor relu(const Tensor& a) {
  if (KinkMonitor::active())
    for (Real v : a.data()) KinkMonitor::observe(std::abs(v));
  return unary(
      a, [](Real x) { return x > 0 ? x : Real{0}; }, [](Real x, Real) { return x > 0 ? Real{1} : Real{0}; });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
  for (Real v : a.data()) {
    if (!(v > 0)) throw DomainError("log", "non-positive argument " + std::to_string(v));
  }
  return unary(a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real{1} / x; });
}

Tensor sqrt(const Tensor& a) {
  for (Real v : a.data()) {
    if (v < 0) throw DomainError("sqrt", "negative argument " + std::to_string(v));
  }
  return unary(
      a, [](Real x) { return std::sqrt(x); }, [](Real, Real y) { return y > 0 ? Real{0.5} / y : Real{0}; });
}

Tensor abs(const Tensor& a) {
  if (KinkMonitor::active())
    for (Real v : a.data())
      if (v != 0) KinkMonitor::observe(std::abs(v));
  return unary(a, [](Real x) { return std::abs(x); }, [](Real x, Real) { return sign_of(x); });
}

Tensor clamp(const Tensor& a, Real lo, Real hi) {
  if (lo > hi) throw DomainError("clamp", "lo > hi");
  if (KinkMonitor::active())
    for (Real v : a.data()) KinkMonitor::observe(std::min(std::abs(v - lo), std::abs(v - hi)));
  return unary(
      a, [lo, hi](Real x) { return std::clamp(x, lo, hi); },
      [lo, hi](Real x, Real) { return (x >= lo && x <= hi) ? Real{1} : Real{0}; });
}

Tensor layer_norm(const Tensor& a, std::size_t axis, Real eps) {
  const AxisSplit s = split_axis(a.shape(), axis, "layer_norm");
  std::vector<Real> out(a.size());
  auto inv_std = std::make_shared<std::vector<Real>>(s.outer * s.inner);
  auto av = a.data();
  const Real n = static_cast<Real>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real mu = 0;
      for (std::size_t k = 0; k < s.n; ++k) mu += av[s.index(o, k, i)];
      mu /= n;
      Real var = 0;
      for (std::size_t k = 0; k < s.n; ++k) {
        const Real d = av[s.index(o, k, i)] - mu;
        var += d * d;
      }
      var /= n;
      const Real inv = Real{1} / std::sqrt(var + eps);
      (*inv_std)[o * s.inner + i] = inv;
      for (std::size_t k = 0; k < s.n; ++k) out[s.index(o, k, i)] = (av[s.index(o, k, i)] - mu) * inv;
    }
  }
  NodePtr an = a.node();
  return finish(a.shape(), std::move(out), {a}, [an, s, inv_std, n](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        Real mean_dy = 0, mean_dy_y = 0;
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = s.index(ou, k, i);
          mean_dy += o.grad[j];
          mean_dy_y += o.grad[j] * o.value[j];
        }
        mean_dy /= n;
        mean_dy_y /= n;
        const Real inv = (*inv_std)[ou * s.inner + i];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t j = s.index(ou, k, i);
          g[j] += inv * (o.grad[j] - mean_dy - o.value[j] * mean_dy_y);
        }
      }
    }
  });
}

Tensor l2_norm(const Tensor& a, std::size_t axis, Real eps) {
  const AxisSplit s = split_axis(a.shape(), axis, "l2_norm");
  std::vector<Real> out(s.outer * s.inner, Real{0});
  auto av = a.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      Real acc = 0;
      for (std::size_t k = 0; k < s.n; ++k) acc += av[s.index(o, k, i)] * av[s.index(o, k, i)];
      out[o * s.inner + i] = std::sqrt(acc + eps);
      if (eps == 0 && acc > 0 && KinkMonitor::active()) KinkMonitor::observe(out[o * s.inner + i]);
    }
  }
  NodePtr an = a.node();
  return finish(reduced_shape(a.shape(), axis), std::move(out), {a}, [an, s](Node& o) {
    auto g = an->grad_buffer();
    for (std::size_t ou = 0; ou < s.outer; ++ou) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const Real norm = o.value[ou * s.inner + i];
        if (norm == 0) continue;
        const Real dy = o.grad[ou * s.inner + i] / norm;
        for (std::size_t k = 0; k < s.n; ++k) g[s.index(ou, k, i)] += dy * an->value[s.index(ou, k, i)];
      }
    }
  });
}

Tensor l1_norm(const Tensor& a, std::size_t axis) { return sum(abs(a), axis); }

Tensor cosine_similarity(const Tensor& a, const Tensor& b, std::size_t axis, Real eps) {
  if (a.shape() != b.shape()) throw ShapeError("cosine_similarity", to_string(a.shape()) + " vs " + to_string(b.shape()));
  return sum(a * b, axis) / (l2_norm(a, axis, eps) * l2_norm(b, axis, eps));
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "conv1d");
  require_rank(weight, 3, "conv1d");
  const std::size_t cin = x.extent(0), t_len = x.extent(1);
  const std::size_t cout = weight.extent(0), kernel = weight.extent(2);
  if (weight.extent(1) != cin) {
    throw ShapeError("conv1d", "input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
  }
  if (kernel % 2 == 0) throw ShapeError("conv1d", "kernel size must be odd, got " + std::to_string(kernel));
  if (bias.size() != cout) throw ShapeError("conv1d", "bias " + to_string(bias.shape()) + " for " + std::to_string(cout) + " channels");
  const std::size_t pad = kernel / 2;
  const std::size_t rows = cin * kernel;
  auto cols = std::make_shared<std::vector<Real>>(rows * t_len, Real{0});
  auto xv = x.data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t k = 0; k < kernel; ++k)
      for (std::size_t t = 0; t < t_len; ++t) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
        if (src >= 0 && src < static_cast<std::ptrdiff_t>(t_len)) (*cols)[(c * kernel + k) * t_len + t] = xv[c * t_len + src];
      }
  std::vector<Real> out(cout * t_len);
  MutMap y(out.data(), cout, t_len);
  y.noalias() = ConstMap(weight.data().data(), cout, rows) * ConstMap(cols->data(), rows, t_len);
  auto bv = bias.data();
  for (std::size_t c = 0; c < cout; ++c) y.row(c).array() += bv[c];
  NodePtr xn = x.node(), wn = weight.node(), bn = bias.node();
  return finish({cout, t_len}, std::move(out), {x, weight, bias},
                [xn, wn, bn, cols, cin, cout, kernel, t_len, rows, pad](Node& o) {
                  ConstMap dy(o.grad.data(), cout, t_len);
                  if (wn->requires_grad) {
                    MutMap(wn->grad_buffer().data(), cout, rows).noalias() +=
                        dy * ConstMap(cols->data(), rows, t_len).transpose();
                  }
                  if (bn->requires_grad) {
                    auto g = bn->grad_buffer();
                    for (std::size_t c = 0; c < cout; ++c) g[c] += dy.row(c).sum();
                  }
                  if (xn->requires_grad) {
                    RowMat dcol = ConstMap(wn->value.data(), cout, rows).transpose() * dy;
                    auto g = xn->grad_buffer();
                    for (std::size_t c = 0; c < cin; ++c)
                      for (std::size_t k = 0; k < kernel; ++k)
                        for (std::size_t t = 0; t < t_len; ++t) {
                          const std::ptrdiff_t src =
                              static_cast<std::ptrdiff_t>(t + k) - static_cast<std::ptrdiff_t>(pad);
                          if (src >= 0 && src < static_cast<std::ptrdiff_t>(t_len))
                            g[c * t_len + src] += dcol(c * kernel + k, t);
                        }
                  }
                });
}

Tensor dropout_mask(const Tensor& a, std::span<const Real> mask, Real rate) {
  if (mask.size() != a.size()) throw ShapeError("dropout", "mask size " + std::to_string(mask.size()));
  const Real keep = Real{1} / (Real{1} - rate);
  std::vector<Real> factors(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) factors[i] = mask[i] * keep;
  return a * Tensor(a.shape(), std::move(factors));
}

}  // namespace demux::ad
