#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "demux/metrics.hpp"

namespace demux {

struct Segment {
  Real onset = 0;     // seconds
  Real duration = 0;  // seconds, > 0
  std::string speaker;
};

struct SegmentList {
  std::string recording;
  std::vector<Segment> segments;

  Real total_duration() const;
  std::vector<std::string> speakers() const;  // sorted
};

class RttmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sorts by (speaker, onset) and merges overlapping or touching segments of
// the same speaker.
SegmentList normalize(SegmentList list);

// Lines: SPEAKER <rec> 1 <onset> <dur> <NA> <NA> <spk> <NA> <NA>.
// Recordings are returned in order of first appearance, each normalized.
std::vector<SegmentList> rttm_parse(std::istream& in);
std::vector<SegmentList> rttm_read(const std::filesystem::path& path);
void rttm_format(std::ostream& out, const std::vector<SegmentList>& lists);
void rttm_write(const std::vector<SegmentList>& lists, const std::filesystem::path& path);

// Runs of active frames become segments; speaker names come from `names`
// (defaults to the column index).
SegmentList segments_from_activity(const ActivityMatrix& activity, Real frame_duration, std::string recording,
                                   const std::vector<std::string>& names = {});

// Frame k is active when it lies in [round(onset/fd), round((onset+dur)/fd)).
// Columns follow `speakers` (the list's sorted speakers when empty); frames
// defaults to the last segment end.
ActivityMatrix activity_from_segments(const SegmentList& list, Real frame_duration,
                                      const std::vector<std::string>& speakers = {}, std::size_t frames = 0);

}  // namespace demux
