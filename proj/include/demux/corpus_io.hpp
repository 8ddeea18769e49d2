#pragma once

#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "demux/rttm.hpp"
#include "demux/synth.hpp"

namespace demux {

class CorpusIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout of a corpus directory:
//   manifest.txt                 header, speaker pool, one line per sequence
//   <id>.features.f64            F x T mixture, little-endian float64, row-major
//   <id>.labels.f64              T x S binary labels
//   <id>.sources.f64             S x F x T per-speaker sources
//   labels.rttm                  reference segments at the corpus frame duration
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

// Flat little-endian float64 tensor files.
void write_f64(const std::filesystem::path& path, std::span<const Real> values);
std::vector<Real> read_f64(const std::filesystem::path& path, std::size_t expected);

// Reference segments of every sample, speaker names "spk<id>".
std::vector<SegmentList> reference_segments(const Corpus& corpus);

}  // namespace demux
