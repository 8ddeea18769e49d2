#include "demux/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "demux/assignment.hpp"

namespace demux {
namespace {

void fill_fractions(DerReport& r) {
  const Real total = static_cast<Real>(r.reference_speech);
  r.fa = static_cast<Real>(r.false_alarm) / total;
  r.mi = static_cast<Real>(r.missed) / total;
  r.cf = static_cast<Real>(r.confusion) / total;
  r.der = static_cast<Real>(r.errors()) / total;
}

}  // namespace

std::size_t ActivityMatrix::speech_frames() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

ActivityMatrix activity_from_labels(const Tensor& labels) {
  if (labels.rank() != 2) throw DerError("activity_from_labels: labels must be T x S");
  ActivityMatrix m(labels.extent(0), labels.extent(1));
  for (std::size_t i = 0; i < m.active.size(); ++i) m.active[i] = labels[i] > 0.5 ? 1 : 0;
  return m;
}

ActivityMatrix binarize(const Tensor& posteriors, std::span<const std::size_t> valid_set, Real threshold,
                        std::size_t median_window) {
  if (posteriors.rank() != 2) throw DerError("binarize: posteriors must be T x S");
  if (!(threshold > 0 && threshold < 1)) throw DerError("binarize: threshold must lie in (0, 1)");
  if (median_window == 0 || median_window % 2 == 0) throw DerError("binarize: median window must be odd");
  const std::size_t frames = posteriors.extent(0), heads = posteriors.extent(1);
  ActivityMatrix out(frames, heads);
  const std::size_t half = median_window / 2;
  for (std::size_t s : valid_set) {
    if (s >= heads) throw DerError("binarize: valid speaker index out of range");
    std::vector<std::uint8_t> raw(frames);
    for (std::size_t t = 0; t < frames; ++t) raw[t] = posteriors.at(t, s) >= threshold ? 1 : 0;
    for (std::size_t t = 0; t < frames; ++t) {
      // Window truncated at the edges; majority of the frames it covers.
      const std::size_t lo = t >= half ? t - half : 0;
      const std::size_t hi = std::min(frames, t + half + 1);
      std::size_t on = 0;
      for (std::size_t u = lo; u < hi; ++u) on += raw[u];
      out.set(t, s, 2 * on > hi - lo);
    }
  }
  return out;
}

DerReport der(const ActivityMatrix& reference, const ActivityMatrix& hypothesis, Real frame_duration) {
  if (reference.frames != hypothesis.frames) {
    throw DerError("der: reference has " + std::to_string(reference.frames) + " frames, hypothesis " +
                   std::to_string(hypothesis.frames));
  }
  const std::size_t frames = reference.frames;
  const std::size_t n_ref = reference.speakers, n_hyp = hypothesis.speakers;
  DerReport report;
  report.frame_duration = frame_duration;
  report.scored_frames = frames;
  report.reference_speech = reference.speech_frames();
  if (report.reference_speech == 0) throw DerError("der: reference contains no speech; DER is undefined");

  const std::size_t n = std::max(n_ref, n_hyp);
  CostMatrix cost(n, 0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t r = 0; r < n_ref; ++r) {
      if (!reference(t, r)) continue;
      for (std::size_t h = 0; h < n_hyp; ++h)
        if (hypothesis(t, h)) cost(r, h) -= 1;
    }
  const Assignment best = assign_min(cost);
  report.mapping.assign(best.permutation.begin(), best.permutation.begin() + static_cast<std::ptrdiff_t>(n_ref));

  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t ref_on = 0, hyp_on = 0, correct = 0;
    for (std::size_t r = 0; r < n_ref; ++r) {
      if (!reference(t, r)) continue;
      ++ref_on;
      const std::size_t h = report.mapping[r];
      if (h < n_hyp && hypothesis(t, h)) ++correct;
    }
    for (std::size_t h = 0; h < n_hyp; ++h) hyp_on += hypothesis(t, h);
    report.missed += ref_on > hyp_on ? ref_on - hyp_on : 0;
    report.false_alarm += hyp_on > ref_on ? hyp_on - ref_on : 0;
    report.confusion += std::min(ref_on, hyp_on) - correct;
  }
  fill_fractions(report);
  return report;
}

DerReport combine(std::span<const DerReport> reports) {
  DerReport total;
  for (const auto& r : reports) {
    total.reference_speech += r.reference_speech;
    total.scored_frames += r.scored_frames;
    total.false_alarm += r.false_alarm;
    total.missed += r.missed;
    total.confusion += r.confusion;
    total.frame_duration = r.frame_duration;
  }
  if (total.reference_speech == 0) throw DerError("der: reference contains no speech; DER is undefined");
  fill_fractions(total);
  return total;
}

std::string DerReport::to_json() const {
  std::ostringstream os;
  os << std::setprecision(17) << "{\"der\": " << der << ", \"fa\": " << fa << ", \"mi\": " << mi << ", \"cf\": " << cf
     << ", \"false_alarm_frames\": " << false_alarm << ", \"missed_frames\": " << missed
     << ", \"confusion_frames\": " << confusion << ", \"reference_speech_frames\": " << reference_speech
     << ", \"scored_frames\": " << scored_frames << ", \"frame_duration\": " << frame_duration << "}";
  return os.str();
}

std::string DerReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "  DER      FA       MI       CF       ref speech (s)\n";
  os << std::setw(6) << der * 100 << "%  " << std::setw(6) << fa * 100 << "%  " << std::setw(6) << mi * 100 << "%  "
     << std::setw(6) << cf * 100 << "%  " << std::setprecision(3)
     << static_cast<Real>(reference_speech) * frame_duration << "\n";
  return os.str();
}

}  // namespace demux
