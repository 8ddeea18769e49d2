#include "demux/rttm.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace demux {
namespace {

Real parse_number(const std::string& field, std::size_t line_no, const char* what) {
  Real value = 0;
  const char* end = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(field.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw RttmError("rttm line " + std::to_string(line_no) + ": bad " + what + " '" + field + "'");
  }
  return value;
}

std::size_t to_frame(Real seconds, Real frame_duration) {
  const auto f = std::llround(seconds / frame_duration);
  return f < 0 ? 0 : static_cast<std::size_t>(f);
}

}  // namespace

Real SegmentList::total_duration() const {
  Real total = 0;
  for (const auto& s : segments) total += s.duration;
  return total;
}

std::vector<std::string> SegmentList::speakers() const {
  std::set<std::string> names;
  for (const auto& s : segments) names.insert(s.speaker);
  return {names.begin(), names.end()};
}

SegmentList normalize(SegmentList list) {
  auto& segs = list.segments;
  std::sort(segs.begin(), segs.end(), [](const Segment& a, const Segment& b) {
    return a.speaker != b.speaker ? a.speaker < b.speaker : a.onset < b.onset;
  });
  std::vector<Segment> merged;
  for (const auto& s : segs) {
    if (!merged.empty() && merged.back().speaker == s.speaker && s.onset <= merged.back().onset + merged.back().duration) {
      auto& last = merged.back();
      last.duration = std::max(last.onset + last.duration, s.onset + s.duration) - last.onset;
    } else {
      merged.push_back(s);
    }
  }
  std::sort(merged.begin(), merged.end(), [](const Segment& a, const Segment& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.speaker < b.speaker;
  });
  segs = std::move(merged);
  return list;
}

std::vector<SegmentList> rttm_parse(std::istream& in) {
  std::vector<SegmentList> lists;
  std::map<std::string, std::size_t> index;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields_in(line);
    std::vector<std::string> fields;
    for (std::string f; fields_in >> f;) fields.push_back(f);
    if (fields.empty()) continue;
    if (fields.size() != 10) {
      throw RttmError("rttm line " + std::to_string(line_no) + ": expected 10 fields, got " +
                      std::to_string(fields.size()));
    }
    if (fields[0] != "SPEAKER") {
      throw RttmError("rttm line " + std::to_string(line_no) + ": unsupported type '" + fields[0] + "'");
    }
    const Real onset = parse_number(fields[3], line_no, "onset");
    const Real duration = parse_number(fields[4], line_no, "duration");
    if (onset < 0) throw RttmError("rttm line " + std::to_string(line_no) + ": negative onset");
    if (duration < 0) throw RttmError("rttm line " + std::to_string(line_no) + ": negative duration");
    if (duration == 0) continue;
    auto [it, inserted] = index.try_emplace(fields[1], lists.size());
    if (inserted) lists.push_back({fields[1], {}});
    lists[it->second].segments.push_back({onset, duration, fields[7]});
  }
  for (auto& l : lists) l = normalize(std::move(l));
  return lists;
}

std::vector<SegmentList> rttm_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RttmError("cannot open " + path.string());
  return rttm_parse(in);
}

void rttm_format(std::ostream& out, const std::vector<SegmentList>& lists) {
  out << std::fixed << std::setprecision(3);
  for (const auto& list : lists) {
    for (const auto& s : list.segments) {
      if (!(s.duration > 0)) throw RttmError("rttm: segment duration must be positive");
      out << "SPEAKER " << list.recording << " 1 " << s.onset << ' ' << s.duration << " <NA> <NA> " << s.speaker
          << " <NA> <NA>\n";
    }
  }
}

void rttm_write(const std::vector<SegmentList>& lists, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw RttmError("cannot write " + path.string());
  rttm_format(out, lists);
}

SegmentList segments_from_activity(const ActivityMatrix& activity, Real frame_duration, std::string recording,
                                   const std::vector<std::string>& names) {
  if (!names.empty() && names.size() != activity.speakers) throw RttmError("segments: one name per speaker required");
  SegmentList list{std::move(recording), {}};
  for (std::size_t s = 0; s < activity.speakers; ++s) {
    const std::string name = names.empty() ? std::to_string(s) : names[s];
    std::size_t t = 0;
    while (t < activity.frames) {
      if (!activity(t, s)) {
        ++t;
        continue;
      }
      const std::size_t start = t;
      while (t < activity.frames && activity(t, s)) ++t;
      list.segments.push_back({static_cast<Real>(start) * frame_duration,
                               static_cast<Real>(t - start) * frame_duration, name});
    }
  }
  std::sort(list.segments.begin(), list.segments.end(), [](const Segment& a, const Segment& b) {
    return a.onset != b.onset ? a.onset < b.onset : a.speaker < b.speaker;
  });
  return list;
}

ActivityMatrix activity_from_segments(const SegmentList& list, Real frame_duration,
                                      const std::vector<std::string>& speakers, std::size_t frames) {
  const std::vector<std::string> names = speakers.empty() ? list.speakers() : speakers;
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < names.size(); ++i) column[names[i]] = i;
  if (frames == 0) {
    for (const auto& s : list.segments) frames = std::max(frames, to_frame(s.onset + s.duration, frame_duration));
  }
  ActivityMatrix m(frames, names.size());
  for (const auto& s : list.segments) {
    auto it = column.find(s.speaker);
    if (it == column.end()) throw RttmError("activity: unknown speaker '" + s.speaker + "'");
    const std::size_t begin = to_frame(s.onset, frame_duration);
    const std::size_t end = std::min(frames, to_frame(s.onset + s.duration, frame_duration));
    for (std::size_t t = begin; t < end; ++t) m.set(t, it->second, true);
  }
  return m;
}

}  // namespace demux
