#include "demux/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace demux::ad {
namespace {

Real evaluate(const std::function<Tensor(const Tensor&)>& f, const Tensor& x) {
  const Tensor y = f(x);
  if (y.size() != 1) throw ShapeError("finite_diff_check", "f must return a scalar, got " + to_string(y.shape()));
  const Real v = y.item();
  if (!std::isfinite(v)) throw DomainError("finite_diff_check", "f returned a non-finite value");
  return v;
}

}  // namespace

std::string GradCheckReport::summary() const {
  std::ostringstream os;
  os << (passed ? "PASS" : "FAIL") << " max_rel_error=" << max_rel_error << " (tol " << tolerance
     << ", element " << worst_index << ", n=" << analytic.size() << ")";
  return os.str();
}

GradCheckReport finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, Real eps, Real tol,
                                  Real floor) {
  if (!(eps > 0)) throw DomainError("finite_diff_check", "eps must be positive");
  GradCheckReport report;
  report.tolerance = tol;

  const bool had_grad = x.requires_grad();
  x.set_requires_grad(true);
  x.zero_grad();
  {
    Tape tape;
    const Tensor y = f(x);
    if (y.size() != 1) throw ShapeError("finite_diff_check", "f must return a scalar");
    if (!std::isfinite(y.item())) throw DomainError("finite_diff_check", "f returned a non-finite value");
    tape.backward(y);
  }
  const Tensor g = x.grad();
  report.analytic.assign(g.data().begin(), g.data().end());
  x.zero_grad();
  x.set_requires_grad(had_grad);

  auto values = x.mutable_data();
  report.numeric.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real saved = values[i];
    values[i] = saved + eps;
    const Real up = evaluate(f, x);
    values[i] = saved - eps;
    const Real down = evaluate(f, x);
    values[i] = saved;
    report.numeric[i] = (up - down) / (2 * eps);
  }

  for (std::size_t i = 0; i < values.size(); ++i) {
    const Real a = report.analytic[i], n = report.numeric[i];
    Real err = std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
    if (!std::isfinite(err)) err = std::numeric_limits<Real>::infinity();
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_index = i;
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace demux::ad
