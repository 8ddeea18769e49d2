#include "demux/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace demux {

using namespace demux::ad;

namespace {

Real bce_value(Real y, Real p, Real eps) {
  const Real q = std::clamp(p, eps, 1 - eps);
  return -y * std::log(q) - (1 - y) * std::log(1 - q);
}

void check_posteriors(const Tensor& posteriors, const Tensor& labels) {
  if (posteriors.rank() != 2 || posteriors.shape() != labels.shape()) {
    throw LossError("diarization loss: posteriors " + to_string(posteriors.shape()) + " vs labels " +
                    to_string(labels.shape()));
  }
}

Tensor zero_scalar() { return Tensor::scalar(0); }

}  // namespace

Tensor clip_prob(const Tensor& p, Real eps) {
  if (!(eps > 0 && eps < 0.5)) throw LossError("clip_prob: eps must lie in (0, 0.5)");
  return clamp(p, eps, 1 - eps);
}

Tensor binary_cross_entropy(const Tensor& target, const Tensor& prob, Real eps) {
  const Tensor p = clip_prob(prob, eps);
  const Tensor one_minus_y = add_scalar(neg(target), 1);
  return neg(target * log(p) + one_minus_y * log(add_scalar(neg(p), 1)));
}

CostMatrix bce_cost_matrix(const Tensor& posteriors, const Tensor& labels, std::span<const std::size_t> valid,
                           Real eps) {
  check_posteriors(posteriors, labels);
  if (valid.empty()) throw LossError("bce_cost_matrix: empty valid speaker set");
  const std::size_t frames = labels.extent(0), n = valid.size();
  CostMatrix cost(n, 0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      Real total = 0;
      for (std::size_t t = 0; t < frames; ++t) total += bce_value(labels.at(t, valid[r]), posteriors.at(t, valid[c]), eps);
      cost(r, c) = total;
    }
  return cost;
}

PitResult loss_diar(const Tensor& posteriors, const Tensor& labels, std::span<const std::size_t> valid,
                    std::optional<std::vector<std::size_t>> fixed_permutation) {
  check_posteriors(posteriors, labels);
  if (valid.empty()) throw LossError("loss_diar: empty valid speaker set");
  for (auto s : valid)
    if (s >= labels.extent(1)) throw LossError("loss_diar: valid index out of range");
  PitResult r;
  r.valid.assign(valid.begin(), valid.end());
  r.cost = bce_cost_matrix(posteriors, labels, valid);
  if (fixed_permutation) {
    if (fixed_permutation->size() != valid.size()) throw LossError("loss_diar: fixed permutation has wrong length");
    r.permutation = *fixed_permutation;
    r.min_total = assignment_cost(r.cost, r.permutation);
  } else {
    const Assignment best = assign_min(r.cost);
    r.permutation = best.permutation;
    r.min_total = best.total;
  }
  // Pairs are laid out in head order, so relabeling the reference columns
  // leaves the summed tensor, and hence the loss, bit-identical.
  std::vector<std::size_t> rows(valid.size());
  std::iota(rows.begin(), rows.end(), 0);
  std::sort(rows.begin(), rows.end(), [&](std::size_t a, std::size_t b) { return r.head(a) < r.head(b); });
  std::vector<std::size_t> heads, columns;
  for (std::size_t i : rows) {
    heads.push_back(r.head(i));
    columns.push_back(r.valid[i]);
  }
  const Tensor matched = gather_columns(posteriors, heads);
  const Tensor targets = gather_columns(labels.detach(), columns);
  const Real norm = static_cast<Real>(labels.extent(0) * valid.size());
  r.loss = scale(sum(binary_cross_entropy(targets, matched)), 1 / norm);
  return r;
}

Tensor loss_ext(const Tensor& existence, std::span<const int> labels) {
  if (existence.size() != labels.size() || labels.empty()) {
    throw LossError("loss_ext: " + std::to_string(existence.size()) + " probabilities vs " +
                    std::to_string(labels.size()) + " labels");
  }
  std::vector<Real> y(labels.begin(), labels.end());
  const Tensor target(existence.shape(), std::move(y));
  return mean(binary_cross_entropy(target, existence));
}

Tensor loss_dis(std::span<const Tensor> demuxed, std::span<const Tensor> oracle, const PitResult& pit) {
  if (pit.valid.empty()) throw LossError("loss_dis: missing assignment (empty valid set)");
  if (pit.permutation.size() != pit.valid.size()) throw LossError("loss_dis: missing assignment; run loss_diar first");
  Tensor total = zero_scalar();
  std::size_t frames = 0;
  for (std::size_t r = 0; r < pit.valid.size(); ++r) {
    const std::size_t column = pit.valid[r];
    if (column >= oracle.size()) throw LossError("loss_dis: no oracle embedding for label column " + std::to_string(column));
    const Tensor& est = demuxed[pit.head(r)];
    const Tensor target = oracle[column].detach();
    if (target.shape() != est.shape()) {
      throw LossError("loss_dis: oracle " + to_string(target.shape()) + " vs demultiplexed " + to_string(est.shape()));
    }
    frames = est.extent(1);
    total = total + sum(l2_norm(target - est, 0));
  }
  return scale(total, 1 / static_cast<Real>(frames * pit.valid.size()));
}

Tensor loss_ort(std::span<const Tensor> demuxed, const Tensor& prototypes, const PitResult& pit) {
  const std::size_t n = pit.valid.size();
  if (n < 2) return zero_scalar();
  if (pit.permutation.size() != n) throw LossError("loss_ort: missing assignment; run loss_diar first");
  const Real eps2 = kCosineEps * kCosineEps;
  const std::size_t frames = demuxed[0].extent(1);
  Tensor total = zero_scalar();
  for (std::size_t r1 = 0; r1 < n; ++r1) {
    const std::size_t h1 = pit.head(r1);
    const Tensor& e1 = demuxed[h1];
    const Tensor proto = expand(slice(prototypes, 1, h1, h1 + 1), 1, frames);
    const Tensor positive = add_scalar(neg(cosine_similarity(e1, proto, 0, eps2)), 1);
    for (std::size_t r2 = r1 + 1; r2 < n; ++r2) {
      const Tensor negative = abs(cosine_similarity(e1, demuxed[pit.head(r2)], 0, eps2));
      total = total + sum(positive) + sum(negative);
    }
  }
  const Real pairs = static_cast<Real>(n * (n - 1) / 2);
  return scale(total, 1 / (static_cast<Real>(frames) * pairs));
}

Tensor loss_spa(std::span<const Tensor> demuxed, std::span<const std::size_t> valid) {
  if (valid.empty()) return zero_scalar();
  Tensor total = zero_scalar();
  std::size_t frames = 0;
  for (auto s : valid) {
    if (s >= demuxed.size()) throw LossError("loss_spa: valid index out of range");
    frames = demuxed[s].extent(1);
    total = total + sum(l1_norm(demuxed[s], 0));
  }
  return scale(total, 1 / static_cast<Real>(frames * valid.size()));
}

Real weighted_total(const LossValues& v, const LossWeights& w) {
  w.validate();
  return w.diar * v.diar + w.ext * v.ext + w.dis * v.dis + w.ort * v.ort + w.spa * v.spa;
}

LossBreakdown loss_total(const ForwardResult& forward, const MixtureSample& sample, std::span<const Tensor> oracle,
                         const LossWeights& weights, std::optional<std::vector<std::size_t>> fixed_permutation) {
  weights.validate();
  const auto& out = forward.output;
  const auto& emb = forward.embeddings;
  LossBreakdown b;
  const Tensor ext = loss_ext(out.existence, sample.existence);
  b.values.ext = ext.item();
  Tensor total = weights.ext > 0 ? scale(ext, weights.ext) : zero_scalar();

  std::vector<Real> p(sample.existence.begin(), sample.existence.end());
  b.valid = valid_speaker_set(p);
  b.has_speakers = !b.valid.empty();
  if (b.has_speakers) {
    const PitResult pit = loss_diar(out.posteriors, sample.labels, b.valid, std::move(fixed_permutation));
    b.permutation = pit.permutation;
    b.values.diar = pit.loss.item();
    if (weights.diar > 0) total = total + scale(pit.loss, weights.diar);
    if (!oracle.empty()) {
      const Tensor dis = loss_dis(emb.demuxed, oracle, pit);
      b.values.dis = dis.item();
      if (weights.dis > 0) total = total + scale(dis, weights.dis);
    }
    const Tensor ort = loss_ort(emb.demuxed, emb.prototypes, pit);
    b.values.ort = ort.item();
    if (weights.ort > 0) total = total + scale(ort, weights.ort);
    const Tensor spa = loss_spa(emb.demuxed, b.valid);
    b.values.spa = spa.item();
    if (weights.spa > 0) total = total + scale(spa, weights.spa);
  }
  b.total = total;
  return b;
}

std::string permutation_string(std::span<const std::size_t> permutation) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < permutation.size(); ++i) os << (i ? "," : "") << permutation[i];
  os << ']';
  return os.str();
}

}  // namespace demux
