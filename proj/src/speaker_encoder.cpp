#include "demux/speaker_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "demux/optim.hpp"

namespace demux {

using namespace demux::ad;

namespace {

constexpr const char* kClassifier = "spk.classifier";
constexpr Real kCosineScale = 10;
constexpr Real kCosineEps2 = 1e-16;

struct SourceItem {
  const Tensor* source;
  std::vector<std::size_t> frames;
  std::size_t label;
};

std::vector<std::size_t> active_frames(const MixtureSample& s, std::size_t column) {
  std::vector<std::size_t> frames;
  for (std::size_t t = 0; t < s.frames(); ++t)
    if (s.labels.at(t, column) > 0.5) frames.push_back(t);
  return frames;
}

// Cross-entropy of one logit column against a class index.
Tensor cross_entropy(const Tensor& logits, std::size_t label) {
  return neg(slice(log_softmax(logits, 0), 0, label, label + 1));
}

}  // namespace

SpeakerEncoder::SpeakerEncoder(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed ^ 0x5ea4e5ULL);
  const std::size_t f = config_.feature_dim, d = config_.embed_dim, k = config_.speaker_encoder_kernel;
  const std::size_t in[] = {f, d, d}, kernel[] = {k, k, 1};
  for (std::size_t i = 0; i < 3; ++i) {
    nn::Conv1d::create(params_, "spk.conv" + std::to_string(i), in[i], d, kernel[i], rng);
    nn::AffineNorm::create(params_, "spk.norm" + std::to_string(i), d, 1);
  }
  bind();
}

SpeakerEncoder::SpeakerEncoder(const ModelConfig& config, nn::ParameterStore params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  bind();
  frozen_ = !params_.contains(std::string(kClassifier) + ".weight") &&
            std::none_of(params_.all().begin(), params_.all().end(), [](const auto& kv) { return kv.second.requires_grad(); });
}

void SpeakerEncoder::bind() {
  layers_.clear();
  for (std::size_t i = 0; i < 3; ++i) {
    layers_.push_back({nn::Conv1d::bind(params_, "spk.conv" + std::to_string(i)),
                       nn::AffineNorm::bind(params_, "spk.norm" + std::to_string(i), 1)});
  }
}

Tensor SpeakerEncoder::encode(const Tensor& source) const {
  if (source.rank() != 2 || source.extent(0) != config_.feature_dim) {
    throw ShapeError("speaker_encode", "expected " + std::to_string(config_.feature_dim) + " x T, got " +
                                           to_string(source.shape()));
  }
  Tensor h = source;
  for (const auto& layer : layers_) h = relu(layer.norm(layer.conv(h)));
  return h;
}

void SpeakerEncoder::attach_classifier(std::size_t num_classes, std::uint64_t seed) {
  params_.erase_prefix(kClassifier);
  std::mt19937_64 rng(seed);
  params_.create(std::string(kClassifier) + ".weight", {num_classes, config_.embed_dim}, rng, 1);
}

Tensor SpeakerEncoder::classify(const Tensor& source, std::span<const std::size_t> frames) const {
  const Tensor weight = params_.get(std::string(kClassifier) + ".weight");
  const Tensor emb = encode(source);
  const Tensor pooled = frames.empty() ? mean(emb, 1) : mean(gather_columns(emb, frames), 1);
  const Tensor unit = pooled / expand(l2_norm(pooled, 0, kCosineEps2), 0, pooled.extent(0));
  const Tensor rows = weight / expand(l2_norm(weight, 1, kCosineEps2), 1, weight.extent(1));
  return scale(matmul(rows, unit), kCosineScale);
}

void SpeakerEncoder::freeze() {
  params_.erase_prefix(kClassifier);
  params_.set_trainable("", false);
  frozen_ = true;
}

PretrainResult pretrain_speaker_encoder(const Corpus& corpus, const PretrainConfig& config,
                                        const std::function<void(std::size_t, Real)>& on_step) {
  std::map<int, std::size_t> class_of;
  for (int id : corpus.speaker_set()) class_of.emplace(id, class_of.size());
  if (class_of.size() < 2) throw ConfigError("pretrain: need at least 2 speakers, corpus has " + std::to_string(class_of.size()));
  if (config.batch_size == 0 || config.epochs == 0) throw ConfigError("pretrain: batch_size and epochs must be positive");

  std::vector<SourceItem> items;
  for (const auto& s : corpus.samples) {
    for (std::size_t k = 0; k < s.max_speakers(); ++k) {
      if (!s.existence[k]) continue;
      items.push_back({&s.sources[k], active_frames(s, k), class_of.at(s.speaker_ids[k])});
    }
  }

  PretrainResult result{SpeakerEncoder(config.model, config.seed), {}, {}};
  for (const auto& [id, _] : class_of) result.classes.push_back(id);
  SpeakerEncoder& enc = result.encoder;
  enc.attach_classifier(class_of.size(), config.seed);
  Adam adam;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      const Real inv = Real{1} / static_cast<Real>(end - begin);
      enc.parameters().zero_grad();
      Real batch_loss = 0;
      for (std::size_t i = begin; i < end; ++i) {
        const auto& item = items[order[i]];
        Tape tape;
        const Tensor loss = scale(cross_entropy(enc.classify(*item.source, item.frames), item.label), inv);
        batch_loss += loss.item();
        tape.backward(loss);
      }
      adam.step(enc.parameters(), config.lr);
      result.step_losses.push_back(batch_loss);
      if (on_step) on_step(step, batch_loss);
      ++step;
    }
  }
  enc.freeze();
  return result;
}

Real linear_probe_accuracy(const SpeakerEncoder& encoder, const Corpus& train, const Corpus& test, std::uint64_t seed,
                           std::size_t epochs) {
  std::map<int, std::size_t> class_of;
  for (int id : train.speaker_set()) class_of.emplace(id, class_of.size());
  const std::size_t d = encoder.config().embed_dim, k = class_of.size();

  auto collect = [&](const Corpus& c, std::vector<Real>& feats, std::vector<std::size_t>& labels) {
    for (const auto& s : c.samples) {
      for (std::size_t col = 0; col < s.max_speakers(); ++col) {
        if (!s.existence[col] || !class_of.count(s.speaker_ids[col])) continue;
        const Tensor emb = encoder.encode(s.sources[col]);
        for (std::size_t t : active_frames(s, col)) {
          for (std::size_t i = 0; i < d; ++i) feats.push_back(emb.at(i, t));
          labels.push_back(class_of.at(s.speaker_ids[col]));
        }
      }
    }
  };
  std::vector<Real> train_feats, test_feats;
  std::vector<std::size_t> train_labels, test_labels;
  collect(train, train_feats, train_labels);
  collect(test, test_feats, test_labels);
  if (train_labels.empty() || test_labels.empty()) return 0;

  // Column-major views: D x N.
  auto to_columns = [d](const std::vector<Real>& rows, std::size_t n) {
    return transpose(Tensor({n, d}, rows));
  };
  const Tensor xtr = to_columns(train_feats, train_labels.size());
  const Tensor xte = to_columns(test_feats, test_labels.size());
  // Standardize with training statistics so one learning rate fits all encoders.
  std::vector<Real> mu(d, 0), sd(d, 0);
  const std::size_t ntr = train_labels.size();
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < ntr; ++j) mu[i] += xtr.at(i, j);
    mu[i] /= static_cast<Real>(ntr);
    for (std::size_t j = 0; j < ntr; ++j) sd[i] += (xtr.at(i, j) - mu[i]) * (xtr.at(i, j) - mu[i]);
    sd[i] = std::sqrt(sd[i] / static_cast<Real>(ntr)) + 1e-6;
  }
  auto standardize = [&](const Tensor& x) {
    std::vector<Real> v(x.data().begin(), x.data().end());
    const std::size_t n = x.extent(1);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < n; ++j) v[i * n + j] = (v[i * n + j] - mu[i]) / sd[i];
    return Tensor(x.shape(), std::move(v));
  };
  const Tensor ztr = standardize(xtr), zte = standardize(xte);

  nn::ParameterStore probe;
  std::mt19937_64 rng(seed);
  const auto head = nn::Linear::create(probe, "probe", d, k, rng);
  std::vector<Real> onehot(k * ntr, 0);
  for (std::size_t j = 0; j < ntr; ++j) onehot[train_labels[j] * ntr + j] = 1;
  const Tensor target({k, ntr}, onehot);
  Adam adam;
  for (std::size_t e = 0; e < epochs; ++e) {
    probe.zero_grad();
    Tape tape;
    const Tensor loss = neg(sum(mul(log_softmax(head(ztr), 0), target))) * (Real{1} / static_cast<Real>(ntr));
    tape.backward(loss);
    adam.step(probe, 0.05);
  }
  const Tensor logits = head(zte);
  std::size_t correct = 0;
  for (std::size_t j = 0; j < test_labels.size(); ++j) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (logits.at(c, j) > logits.at(best, j)) best = c;
    correct += best == test_labels[j];
  }
  return static_cast<Real>(correct) / static_cast<Real>(test_labels.size());
}

}  // namespace demux
