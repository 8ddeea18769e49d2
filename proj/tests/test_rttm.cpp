#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "demux/rttm.hpp"
#include "oracles.hpp"

using namespace demux;

TEST_CASE("write then read is the identity") {
  SegmentList list{"rec1", {{0.5, 1.25, "alice"}, {2.0, 0.75, "bob"}, {3.5, 0.5, "alice"}}};
  std::stringstream io;
  rttm_format(io, {list});
  const auto back = rttm_parse(io);
  REQUIRE(back.size() == 1);
  const auto expected = normalize(list);
  REQUIRE(back[0].segments.size() == 3);
  CHECK(back[0].recording == "rec1");
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[0].segments[i].speaker == expected.segments[i].speaker);
    CHECK(back[0].segments[i].onset == doctest::Approx(expected.segments[i].onset).epsilon(1e-12));
    CHECK(back[0].segments[i].duration == doctest::Approx(expected.segments[i].duration).epsilon(1e-12));
  }
}

TEST_CASE("parse errors name the line") {
  std::stringstream in("SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 0.0 1.0 <NA> <NA> a <NA>\n");
  try {
    rttm_parse(in);
    FAIL("expected RttmError");
  } catch (const RttmError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::stringstream neg("SPEAKER r 1 0.0 -1.0 <NA> <NA> a <NA> <NA>\n");
  CHECK_THROWS_AS(rttm_parse(neg), RttmError);
  CHECK_THROWS_AS(rttm_read("/nonexistent/file.rttm"), RttmError);
}

TEST_CASE("overlapping same-speaker segments merge and keep the union duration") {
  std::stringstream in(
      "SPEAKER r 1 0.0 2.0 <NA> <NA> a <NA> <NA>\n"
      "SPEAKER r 1 1.0 2.0 <NA> <NA> a <NA> <NA>\n"
      "SPEAKER r 1 5.0 1.0 <NA> <NA> a <NA> <NA>\n"
      "SPEAKER r 1 0.5 1.0 <NA> <NA> b <NA> <NA>\n");
  const auto lists = rttm_parse(in);
  REQUIRE(lists.size() == 1);
  const auto& segs = lists[0].segments;
  REQUIRE(segs.size() == 3);
  CHECK(segs[0].speaker == "a");
  CHECK(segs[0].onset == 0);
  CHECK(segs[0].duration == doctest::Approx(3.0));
  CHECK(lists[0].total_duration() == doctest::Approx(3.0 + 1.0 + 1.0));
}

TEST_CASE("frames to segments and back") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = oracle::random_activity(40, 3, 0.5, rng);
    for (std::size_t s = 0; s < 3; ++s) a.set(39, s, true);  // fixes the frame count on the way back
    const auto list = segments_from_activity(a, 0.01, "r", {"x", "y", "z"});
    std::stringstream io;
    rttm_format(io, {list});
    const auto back = rttm_parse(io);
    CHECK(activity_from_segments(back[0], 0.01, {"x", "y", "z"}, 40) == a);
  }
}

TEST_CASE("file round trip keeps recordings in order") {
  const auto path = std::filesystem::temp_directory_path() / "demux_rt.rttm";
  const std::vector<SegmentList> lists{{"b", {{0.1, 0.2, "s"}}}, {"a", {{0.3, 0.4, "t"}}}};
  rttm_write(lists, path);
  const auto back = rttm_read(path);
  REQUIRE(back.size() == 2);
  CHECK(back[0].recording == "b");
  CHECK(back[1].recording == "a");
  std::filesystem::remove(path);
}
