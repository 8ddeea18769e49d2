#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "demux/tensor.hpp"

namespace demux {

using ad::Real;
using ad::Tensor;

// Binary frame x speaker activity.
struct ActivityMatrix {
  std::size_t frames = 0;
  std::size_t speakers = 0;
  std::vector<std::uint8_t> active;

  ActivityMatrix() = default;
  ActivityMatrix(std::size_t t, std::size_t s) : frames(t), speakers(s), active(t * s, 0) {}

  bool operator()(std::size_t t, std::size_t s) const { return active[t * speakers + s] != 0; }
  void set(std::size_t t, std::size_t s, bool on) { active[t * speakers + s] = on ? 1 : 0; }
  std::size_t speech_frames() const;
  bool operator==(const ActivityMatrix&) const = default;
};

// Entries > 0.5 count as active.
ActivityMatrix activity_from_labels(const Tensor& labels);

// Heads outside valid_set are forced inactive; the rest are active where
// posterior >= threshold, then median-smoothed per speaker over an odd
// window (window 1 disables smoothing).
ActivityMatrix binarize(const Tensor& posteriors, std::span<const std::size_t> valid_set, Real threshold = 0.5,
                        std::size_t median_window = 1);

struct DerReport {
  std::size_t reference_speech = 0;  // reference speaker-frames
  std::size_t scored_frames = 0;
  std::size_t false_alarm = 0;
  std::size_t missed = 0;
  std::size_t confusion = 0;
  Real frame_duration = 0.01;
  // Fractions of reference speech.
  Real der = 0, fa = 0, mi = 0, cf = 0;
  // Reference speaker r is mapped to hypothesis speaker mapping[r];
  // a value >= the hypothesis speaker count means unmapped.
  std::vector<std::size_t> mapping;

  std::size_t errors() const { return false_alarm + missed + confusion; }
  std::string to_json() const;
  std::string to_table() const;
};

class DerError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Frame-level diarization error with zero collar and overlap scored.
// Speakers are mapped once per recording by maximum total frame overlap.
DerReport der(const ActivityMatrix& reference, const ActivityMatrix& hypothesis, Real frame_duration = 0.01);

// Pools counts of several recordings (each with its own mapping).
DerReport combine(std::span<const DerReport> reports);

}  // namespace demux
