#include "demux/corpus_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "demux/metrics.hpp"
#include "demux/rttm.hpp"

namespace demux {
namespace {

constexpr const char* kMagic = "demux-corpus";
constexpr int kVersion = 1;

static_assert(std::endian::native == std::endian::little, "corpus files assume a little-endian host");

std::string join_ids(const std::vector<int>& ids) {
  std::ostringstream os;
  for (std::size_t i = 0; i < ids.size(); ++i) os << (i ? "," : "") << ids[i];
  return os.str();
}

std::vector<int> split_ids(const std::string& s) {
  std::vector<int> ids;
  std::istringstream in(s);
  for (std::string tok; std::getline(in, tok, ',');) ids.push_back(std::stoi(tok));
  return ids;
}

std::vector<std::string> speaker_names(const MixtureSample& s) {
  std::vector<std::string> names;
  for (std::size_t k = 0; k < s.speaker_ids.size(); ++k) {
    names.push_back(s.speaker_ids[k] >= 0 ? "spk" + std::to_string(s.speaker_ids[k]) : "head" + std::to_string(k));
  }
  return names;
}

template <typename T>
T expect_field(std::istream& in, const std::string& key, const std::string& context) {
  std::string k;
  T value{};
  if (!(in >> k) || k != key || !(in >> value)) throw CorpusIoError("manifest: expected '" + key + "' in " + context);
  return value;
}

}  // namespace

void write_f64(const std::filesystem::path& path, std::span<const Real> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CorpusIoError("cannot write " + path.string());
  for (Real v : values) {
    const double d = static_cast<double>(v);
    out.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  if (!out) throw CorpusIoError("write failed: " + path.string());
}

std::vector<Real> read_f64(const std::filesystem::path& path, std::size_t expected) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CorpusIoError("cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != expected * sizeof(double)) {
    throw CorpusIoError(path.string() + ": expected " + std::to_string(expected) + " float64 values, file has " +
                        std::to_string(bytes) + " bytes");
  }
  in.seekg(0);
  std::vector<double> raw(expected);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(bytes));
  return {raw.begin(), raw.end()};
}

std::vector<SegmentList> reference_segments(const Corpus& corpus) {
  std::vector<SegmentList> lists;
  for (const auto& s : corpus.samples) {
    lists.push_back(
        segments_from_activity(activity_from_labels(s.labels), corpus.frame_duration, s.id, speaker_names(s)));
  }
  return lists;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream man(dir / "manifest.txt");
  if (!man) throw CorpusIoError("cannot write manifest in " + dir.string());
  man << std::setprecision(17);
  man << kMagic << ' ' << kVersion << "\n";
  man << "dtype float64\n";
  man << "feature_dim " << corpus.feature_dim << "\n";
  man << "max_speakers " << corpus.max_speakers << "\n";
  man << "frame_duration " << corpus.frame_duration << "\n";
  man << "seed " << corpus.seed << "\n";
  man << "speakers " << corpus.speakers.size() << "\n";
  for (const auto& spk : corpus.speakers) {
    man << "speaker " << spk.speaker_id << " scale " << spk.scale << " p_on_to_off " << spk.p_on_to_off
        << " p_off_to_on " << spk.p_off_to_on << " mean";
    for (Real m : spk.mean) man << ' ' << m;
    man << "\n";
  }
  man << "sequences " << corpus.samples.size() << "\n";
  for (const auto& s : corpus.samples) {
    man << "sequence " << s.id << " frames " << s.frames() << " ids " << join_ids(s.speaker_ids) << "\n";
    write_f64(dir / (s.id + ".features.f64"), s.features.data());
    write_f64(dir / (s.id + ".labels.f64"), s.labels.data());
    std::vector<Real> sources;
    for (const auto& src : s.sources) sources.insert(sources.end(), src.data().begin(), src.data().end());
    write_f64(dir / (s.id + ".sources.f64"), sources);
  }
  if (!man) throw CorpusIoError("manifest write failed in " + dir.string());
  rttm_write(reference_segments(corpus), dir / "labels.rttm");
}

Corpus read_corpus(const std::filesystem::path& dir) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw CorpusIoError("no manifest.txt in " + dir.string());
  std::string magic;
  int version = 0;
  if (!(man >> magic >> version) || magic != kMagic) throw CorpusIoError(dir.string() + ": not a corpus manifest");
  if (version != kVersion) throw CorpusIoError("manifest: unsupported version " + std::to_string(version));
  const std::string ctx = dir.string();
  if (expect_field<std::string>(man, "dtype", ctx) != "float64") throw CorpusIoError("manifest: unsupported dtype");
  Corpus corpus;
  corpus.feature_dim = expect_field<std::size_t>(man, "feature_dim", ctx);
  corpus.max_speakers = expect_field<std::size_t>(man, "max_speakers", ctx);
  corpus.frame_duration = expect_field<Real>(man, "frame_duration", ctx);
  corpus.seed = expect_field<std::uint64_t>(man, "seed", ctx);
  const auto n_speakers = expect_field<std::size_t>(man, "speakers", ctx);
  for (std::size_t i = 0; i < n_speakers; ++i) {
    SpeakerProfile spk;
    spk.speaker_id = expect_field<int>(man, "speaker", ctx);
    spk.scale = expect_field<Real>(man, "scale", ctx);
    spk.p_on_to_off = expect_field<Real>(man, "p_on_to_off", ctx);
    spk.p_off_to_on = expect_field<Real>(man, "p_off_to_on", ctx);
    std::string key;
    if (!(man >> key) || key != "mean") throw CorpusIoError("manifest: expected speaker mean");
    spk.mean.resize(corpus.feature_dim);
    for (auto& m : spk.mean)
      if (!(man >> m)) throw CorpusIoError("manifest: truncated speaker mean");
    corpus.speakers.push_back(std::move(spk));
  }
  const auto n_seq = expect_field<std::size_t>(man, "sequences", ctx);
  const std::size_t fdim = corpus.feature_dim, heads = corpus.max_speakers;
  for (std::size_t i = 0; i < n_seq; ++i) {
    MixtureSample s;
    s.id = expect_field<std::string>(man, "sequence", ctx);
    const auto frames = expect_field<std::size_t>(man, "frames", ctx);
    s.speaker_ids = split_ids(expect_field<std::string>(man, "ids", ctx));
    if (s.speaker_ids.size() != heads) throw CorpusIoError("manifest: sequence " + s.id + " has wrong id count");
    s.features = Tensor({fdim, frames}, read_f64(dir / (s.id + ".features.f64"), fdim * frames));
    s.labels = Tensor({frames, heads}, read_f64(dir / (s.id + ".labels.f64"), frames * heads));
    const auto sources = read_f64(dir / (s.id + ".sources.f64"), heads * fdim * frames);
    for (std::size_t k = 0; k < heads; ++k) {
      const auto begin = sources.begin() + static_cast<std::ptrdiff_t>(k * fdim * frames);
      s.sources.emplace_back(ad::Shape{fdim, frames}, std::vector<Real>(begin, begin + static_cast<std::ptrdiff_t>(fdim * frames)));
    }
    s.existence.assign(heads, 0);
    for (std::size_t t = 0; t < frames; ++t)
      for (std::size_t k = 0; k < heads; ++k)
        if (s.labels.at(t, k) > 0.5) s.existence[k] = 1;
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

}  // namespace demux
