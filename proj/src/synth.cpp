#include "demux/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

namespace demux {
namespace {

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Real uniform(std::mt19937_64& rng, Real lo, Real hi) {
  return std::uniform_real_distribution<Real>(lo, hi)(rng);
}

Real squared_distance(const std::vector<Real>& a, const std::vector<Real>& b) {
  Real d = 0;
  for (std::size_t i = 0; i < a.size(); ++i) d += (a[i] - b[i]) * (a[i] - b[i]);
  return d;
}

// Two-state chain started from its stationary distribution.
std::vector<std::uint8_t> sample_activity(const SpeakerProfile& spk, std::size_t frames, std::mt19937_64& rng) {
  std::bernoulli_distribution start(spk.stationary_activity());
  std::bernoulli_distribution leave_on(spk.p_on_to_off);
  std::bernoulli_distribution leave_off(spk.p_off_to_on);
  std::vector<std::uint8_t> active(frames);
  bool on = start(rng);
  for (std::size_t t = 0; t < frames; ++t) {
    active[t] = on ? 1 : 0;
    on = on ? !leave_on(rng) : leave_off(rng);
  }
  return active;
}

Real realized_overlap(const std::vector<std::vector<std::uint8_t>>& chains, std::size_t frames) {
  std::size_t speech = 0, overlap = 0;
  for (std::size_t t = 0; t < frames; ++t) {
    std::size_t n = 0;
    for (const auto& c : chains) n += c[t];
    speech += n >= 1;
    overlap += n >= 2;
  }
  return speech == 0 ? 0 : static_cast<Real>(overlap) / static_cast<Real>(speech);
}

Corpus subset(const Corpus& corpus, const std::vector<std::size_t>& indices) {
  Corpus out;
  out.feature_dim = corpus.feature_dim;
  out.max_speakers = corpus.max_speakers;
  out.frame_duration = corpus.frame_duration;
  out.seed = corpus.seed;
  out.speakers = corpus.speakers;
  for (auto i : indices) out.samples.push_back(corpus.samples[i]);
  return out;
}

}  // namespace

std::size_t MixtureSample::num_speakers() const {
  return static_cast<std::size_t>(std::count(existence.begin(), existence.end(), 1));
}

Real Corpus::overlap_ratio() const {
  std::size_t speech = 0, overlap = 0;
  for (const auto& s : samples) {
    const std::size_t frames = s.frames(), heads = s.max_speakers();
    for (std::size_t t = 0; t < frames; ++t) {
      std::size_t n = 0;
      for (std::size_t k = 0; k < heads; ++k) n += s.labels.at(t, k) > 0.5;
      speech += n >= 1;
      overlap += n >= 2;
    }
  }
  return speech == 0 ? 0 : static_cast<Real>(overlap) / static_cast<Real>(speech);
}

std::vector<int> Corpus::speaker_set() const {
  std::set<int> ids;
  for (const auto& s : samples)
    for (int id : s.speaker_ids)
      if (id >= 0) ids.insert(id);
  return {ids.begin(), ids.end()};
}

std::vector<SpeakerProfile> generate_speaker_pool(std::size_t feature_dim, const SpeakerPoolConfig& config,
                                                  std::uint64_t seed) {
  if (feature_dim == 0) throw SynthError("speaker pool: feature dimension must be positive");
  if (!(config.separation > 0)) throw SynthError("speaker pool: separation must be positive");
  if (!(config.scale_min > 0) || config.scale_max < config.scale_min) throw SynthError("speaker pool: bad scale range");
  auto in_unit = [](Real lo, Real hi) { return lo > 0 && hi < 1 && lo <= hi; };
  if (!in_unit(config.p_on_to_off_min, config.p_on_to_off_max) || !in_unit(config.p_off_to_on_min, config.p_off_to_on_max)) {
    throw SynthError("speaker pool: Markov transition probabilities must lie in (0, 1)");
  }
  auto rng = derived_rng(seed, 0x5e1, 0);
  std::normal_distribution<Real> normal(0, config.mean_scale);
  const Real min_sq = config.separation * config.separation;
  std::vector<SpeakerProfile> pool;
  constexpr std::size_t kMaxDraws = 100000;
  std::size_t draws = 0;
  while (pool.size() < config.num_speakers) {
    if (++draws > kMaxDraws) {
      throw SynthError("speaker pool: cannot place " + std::to_string(config.num_speakers) +
                       " speakers with separation " + std::to_string(config.separation));
    }
    SpeakerProfile spk;
    spk.speaker_id = static_cast<int>(pool.size());
    spk.mean.resize(feature_dim);
    for (auto& m : spk.mean) m = normal(rng);
    const bool far = std::all_of(pool.begin(), pool.end(),
                                 [&](const SpeakerProfile& o) { return squared_distance(o.mean, spk.mean) >= min_sq; });
    if (!far) continue;
    spk.scale = uniform(rng, config.scale_min, config.scale_max);
    spk.p_on_to_off = uniform(rng, config.p_on_to_off_min, config.p_on_to_off_max);
    spk.p_off_to_on = uniform(rng, config.p_off_to_on_min, config.p_off_to_on_max);
    pool.push_back(std::move(spk));
  }
  return pool;
}

Real expected_overlap_ratio(const std::vector<SpeakerProfile>& speakers) {
  Real none = 1;
  for (const auto& s : speakers) none *= 1 - s.stationary_activity();
  Real exactly_one = 0;
  for (std::size_t i = 0; i < speakers.size(); ++i) {
    Real p = speakers[i].stationary_activity();
    for (std::size_t j = 0; j < speakers.size(); ++j)
      if (j != i) p *= 1 - speakers[j].stationary_activity();
    exactly_one += p;
  }
  const Real any = 1 - none;
  return any <= 0 ? 0 : (any - exactly_one) / any;
}

MixtureSample mix_sources(std::string id, const std::vector<Tensor>& sources, const Tensor& labels,
                          std::vector<int> speaker_ids) {
  if (labels.rank() != 2) throw SynthError("mix_sources: labels must be T x S");
  const std::size_t frames = labels.extent(0), heads = labels.extent(1);
  if (sources.size() != heads || speaker_ids.size() != heads) {
    throw SynthError("mix_sources: need one source and one speaker id per label column");
  }
  const std::size_t fdim = sources.empty() ? 0 : sources[0].extent(0);
  MixtureSample sample;
  sample.id = std::move(id);
  sample.labels = labels.detach();
  sample.speaker_ids = std::move(speaker_ids);
  sample.existence.assign(heads, 0);
  std::vector<Real> mixture(fdim * frames, Real{0});
  for (std::size_t s = 0; s < heads; ++s) {
    if (sources[s].shape() != ad::Shape{fdim, frames}) throw SynthError("mix_sources: source shape mismatch");
    std::vector<Real> src(sources[s].data().begin(), sources[s].data().end());
    for (std::size_t t = 0; t < frames; ++t) {
      const Real y = labels.at(t, s);
      if (y != 0 && y != 1) throw SynthError("mix_sources: labels must be binary");
      if (y == 1) sample.existence[s] = 1;
      for (std::size_t f = 0; f < fdim; ++f) {
        if (y == 0) src[f * frames + t] = 0;
        mixture[f * frames + t] += y * src[f * frames + t];
      }
    }
    sample.sources.emplace_back(ad::Shape{fdim, frames}, std::move(src));
  }
  sample.features = Tensor({fdim, frames}, std::move(mixture));
  return sample;
}

Corpus generate_corpus(const SynthConfig& config) {
  const std::size_t needed = *std::max_element(config.speakers_per_mix.begin(), config.speakers_per_mix.end());
  if (config.pool.num_speakers < needed) {
    throw SynthError("generate_corpus: speaker pool of " + std::to_string(config.pool.num_speakers) +
                     " is smaller than " + std::to_string(needed) + " speakers per mixture");
  }
  return generate_corpus(config, generate_speaker_pool(config.feature_dim, config.pool, config.seed));
}

Corpus generate_corpus(const SynthConfig& config, const std::vector<SpeakerProfile>& pool) {
  if (config.num_sequences == 0 || config.frames == 0 || config.feature_dim == 0) {
    throw SynthError("generate_corpus: num_sequences, frames and feature_dim must be positive");
  }
  if (config.speakers_per_mix.empty()) throw SynthError("generate_corpus: speakers_per_mix is empty");
  for (auto k : config.speakers_per_mix) {
    if (k == 0 || k > config.max_speakers) {
      throw SynthError("generate_corpus: speakers per mixture must be in 1.." + std::to_string(config.max_speakers));
    }
    if (k > pool.size()) throw SynthError("generate_corpus: speaker pool smaller than speakers per mixture");
  }
  for (const auto& spk : pool) {
    if (spk.mean.size() != config.feature_dim) throw SynthError("generate_corpus: speaker mean dimension mismatch");
  }
  if (config.overlap_target && (*config.overlap_target < 0 || *config.overlap_target > 1)) {
    throw SynthError("generate_corpus: overlap target must lie in [0, 1]");
  }

  Corpus corpus;
  corpus.feature_dim = config.feature_dim;
  corpus.max_speakers = config.max_speakers;
  corpus.frame_duration = config.frame_duration;
  corpus.seed = config.seed;
  corpus.speakers = pool;

  const std::size_t frames = config.frames, fdim = config.feature_dim;
  for (std::size_t n = 0; n < config.num_sequences; ++n) {
    auto rng = derived_rng(config.seed, 0x5e9, n);
    const std::size_t k = config.speakers_per_mix[std::uniform_int_distribution<std::size_t>(
        0, config.speakers_per_mix.size() - 1)(rng)];
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<SpeakerProfile> chosen;
    for (std::size_t i = 0; i < k; ++i) chosen.push_back(pool[order[i]]);

    std::vector<std::vector<std::uint8_t>> chains;
    bool accepted = false;
    for (std::size_t attempt = 0; attempt < config.max_attempts && !accepted; ++attempt) {
      chains.clear();
      for (const auto& spk : chosen) chains.push_back(sample_activity(spk, frames, rng));
      const bool every_speaker_talks = std::all_of(chains.begin(), chains.end(), [](const auto& c) {
        return std::any_of(c.begin(), c.end(), [](std::uint8_t v) { return v != 0; });
      });
      if (!every_speaker_talks) continue;
      if (config.overlap_target) {
        const Real ratio = realized_overlap(chains, frames);
        if (std::abs(ratio - *config.overlap_target) > config.overlap_tolerance) continue;
      }
      accepted = true;
    }
    if (!accepted) {
      std::ostringstream msg;
      msg << "generate_corpus: sequence " << n << " rejected " << config.max_attempts << " times";
      if (config.overlap_target) {
        msg << "; overlap target " << *config.overlap_target << " +/- " << config.overlap_tolerance
            << " is infeasible for these Markov parameters (expected overlap " << expected_overlap_ratio(chosen)
            << ")";
      }
      throw SynthError(msg.str());
    }

    std::vector<Real> labels(frames * config.max_speakers, Real{0});
    std::vector<Tensor> sources;
    std::vector<int> ids(config.max_speakers, -1);
    for (std::size_t s = 0; s < config.max_speakers; ++s) {
      std::vector<Real> src(fdim * frames, Real{0});
      if (s < k) {
        const auto& spk = chosen[s];
        ids[s] = spk.speaker_id;
        std::normal_distribution<Real> noise(0, spk.scale);
        for (std::size_t t = 0; t < frames; ++t) {
          if (!chains[s][t]) continue;
          labels[t * config.max_speakers + s] = 1;
          for (std::size_t f = 0; f < fdim; ++f) src[f * frames + t] = spk.mean[f] + noise(rng);
        }
      }
      sources.emplace_back(ad::Shape{fdim, frames}, std::move(src));
    }
    char name[32];
    std::snprintf(name, sizeof(name), "seq%05zu", n);
    corpus.samples.push_back(
        mix_sources(name, sources, Tensor({frames, config.max_speakers}, std::move(labels)), std::move(ids)));
  }
  return corpus;
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitRatios& ratios, std::uint64_t seed, bool hold_out_speakers) {
  if (ratios.train < 0 || ratios.dev < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.dev + ratios.test - 1) > 1e-9) {
    throw SynthError("split: ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = corpus.samples.size();
  const auto count = [n](Real r) { return static_cast<std::size_t>(std::floor(static_cast<Real>(n) * r + 1e-9)); };
  const std::size_t n_dev = count(ratios.dev), n_test = count(ratios.test);
  if (n_dev + n_test >= n || (ratios.dev > 0 && n_dev == 0) || (ratios.test > 0 && n_test == 0)) {
    throw SynthError("split: a partition would be empty (" + std::to_string(n) + " sequences)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto rng = derived_rng(seed, 0x591, 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::size_t> test(order.begin(), order.begin() + n_test);
  std::vector<std::size_t> dev(order.begin() + n_test, order.begin() + n_test + n_dev);
  std::vector<std::size_t> train(order.begin() + n_test + n_dev, order.end());
  if (hold_out_speakers) {
    std::set<int> test_speakers;
    for (auto i : test)
      for (int id : corpus.samples[i].speaker_ids)
        if (id >= 0) test_speakers.insert(id);
    std::vector<std::size_t> kept;
    for (auto i : train) {
      const auto& ids = corpus.samples[i].speaker_ids;
      const bool shares = std::any_of(ids.begin(), ids.end(), [&](int id) { return test_speakers.count(id) > 0; });
      (shares ? dev : kept).push_back(i);
    }
    train = std::move(kept);
  }
  if (train.empty()) throw SynthError("split: training partition is empty after speaker hold-out");
  std::sort(train.begin(), train.end());
  std::sort(dev.begin(), dev.end());
  std::sort(test.begin(), test.end());
  return {subset(corpus, train), subset(corpus, dev), subset(corpus, test)};
}

}  // namespace demux
