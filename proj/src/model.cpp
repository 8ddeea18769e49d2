#include "demux/model.hpp"

#include <stdexcept>

namespace demux {

using namespace demux::ad;

namespace {

std::string block_name(const char* stack, std::size_t i) { return std::string(stack) + ".block" + std::to_string(i); }

std::mt19937_64 branch_rng(std::uint64_t seed, std::size_t speaker) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0xb4a9u,
                    static_cast<std::uint32_t>(speaker)};
  return std::mt19937_64(seq);
}

}  // namespace

EendDemux::EendDemux(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  build(seed);
  bind();
}

EendDemux::EendDemux(const ModelConfig& config, nn::ParameterStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
  bind();
}

std::string EendDemux::branch_prefix(std::size_t speaker) { return "demux.branch" + std::to_string(speaker); }

void EendDemux::build(std::uint64_t seed) {
  const std::size_t d = config_.embed_dim;
  std::mt19937_64 rng(seed);
  nn::Linear::create(params_, "encoder.input", config_.feature_dim, d, rng);
  for (std::size_t i = 0; i < config_.encoder_blocks; ++i) {
    const auto name = block_name("encoder", i);
    nn::AffineNorm::create(params_, name + ".norm_attn", d, 0);
    nn::MultiHeadAttention::create(params_, name + ".attn", d, config_.attention_heads, rng);
    nn::AffineNorm::create(params_, name + ".norm_ffn", d, 0);
    nn::FeedForward::create(params_, name + ".ffn", d, config_.ffn_dim, rng);
  }
  nn::AffineNorm::create(params_, "encoder.final_norm", d, 0);
  for (std::size_t i = 0; i < config_.decoder_blocks; ++i) {
    const auto name = block_name("decoder", i);
    nn::AffineNorm::create(params_, name + ".norm_self", d, 0);
    nn::MultiHeadAttention::create(params_, name + ".self_attn", d, config_.attention_heads, rng);
    nn::AffineNorm::create(params_, name + ".norm_cross", d, 0);
    nn::MultiHeadAttention::create(params_, name + ".cross_attn", d, config_.attention_heads, rng);
    nn::AffineNorm::create(params_, name + ".norm_ffn", d, 0);
    nn::FeedForward::create(params_, name + ".ffn", d, config_.ffn_dim, rng);
  }
  nn::AffineNorm::create(params_, "decoder.final_norm", d, 0);
  nn::Linear::create(params_, "existence", d, 1, rng);
  for (std::size_t s = 0; s < config_.max_speakers; ++s) {
    auto brng = branch_rng(seed, s);
    add_branch(s, brng);
  }
}

void EendDemux::add_branch(std::size_t speaker, std::mt19937_64& rng) {
  const std::size_t d = config_.embed_dim;
  const auto prefix = branch_prefix(speaker);
  for (std::size_t k = 0; k < config_.demux_cnn_stacks; ++k) {
    nn::Conv1d::create(params_, prefix + ".conv" + std::to_string(k), d, d, config_.demux_kernel_size, rng);
    nn::AffineNorm::create(params_, prefix + ".norm" + std::to_string(k), d, 1);
  }
}

void EendDemux::bind() {
  input_projection_ = nn::Linear::bind(params_, "encoder.input");
  encoder_.clear();
  for (std::size_t i = 0; i < config_.encoder_blocks; ++i) {
    const auto name = block_name("encoder", i);
    encoder_.push_back({nn::AffineNorm::bind(params_, name + ".norm_attn", 0),
                        nn::AffineNorm::bind(params_, name + ".norm_ffn", 0),
                        nn::MultiHeadAttention::bind(params_, name + ".attn", config_.attention_heads),
                        nn::FeedForward::bind(params_, name + ".ffn")});
  }
  encoder_norm_ = nn::AffineNorm::bind(params_, "encoder.final_norm", 0);
  branches_.clear();
  for (std::size_t s = 0; s < config_.max_speakers; ++s) {
    std::vector<DemuxStage> stages;
    for (std::size_t k = 0; k < config_.demux_cnn_stacks; ++k) {
      const auto prefix = branch_prefix(s);
      stages.push_back({nn::Conv1d::bind(params_, prefix + ".conv" + std::to_string(k)),
                        nn::AffineNorm::bind(params_, prefix + ".norm" + std::to_string(k), 1)});
    }
    branches_.push_back(std::move(stages));
  }
  decoder_.clear();
  for (std::size_t i = 0; i < config_.decoder_blocks; ++i) {
    const auto name = block_name("decoder", i);
    decoder_.push_back({nn::AffineNorm::bind(params_, name + ".norm_self", 0),
                        nn::AffineNorm::bind(params_, name + ".norm_cross", 0),
                        nn::AffineNorm::bind(params_, name + ".norm_ffn", 0),
                        nn::MultiHeadAttention::bind(params_, name + ".self_attn", config_.attention_heads),
                        nn::MultiHeadAttention::bind(params_, name + ".cross_attn", config_.attention_heads),
                        nn::FeedForward::bind(params_, name + ".ffn")});
  }
  decoder_norm_ = nn::AffineNorm::bind(params_, "decoder.final_norm", 0);
  existence_head_ = nn::Linear::bind(params_, "existence");
}

void EendDemux::grow_speakers(std::size_t new_speakers, std::uint64_t seed) {
  if (new_speakers < config_.max_speakers) {
    throw ConfigError("cannot shrink the demultiplexer from " + std::to_string(config_.max_speakers) + " to " +
                      std::to_string(new_speakers) + " speakers");
  }
  for (std::size_t s = config_.max_speakers; s < new_speakers; ++s) {
    auto rng = branch_rng(seed, s);
    add_branch(s, rng);
  }
  config_.max_speakers = new_speakers;
  bind();
}

Tensor EendDemux::mixture_encode(const Tensor& features, const nn::Context& ctx) const {
  if (features.rank() != 2 || features.extent(0) != config_.feature_dim) {
    throw ShapeError("mixture_encode", "expected " + std::to_string(config_.feature_dim) + " x T features, got " +
                                           to_string(features.shape()));
  }
  Tensor h = input_projection_(features);
  for (const auto& block : encoder_) {
    const Tensor normed = block.norm_attn(h);
    h = h + nn::apply_dropout(block.attn(normed, normed), config_.dropout, ctx);
    h = h + nn::apply_dropout(block.ffn(block.norm_ffn(h), config_.dropout, ctx), config_.dropout, ctx);
  }
  return encoder_norm_(h);
}

std::vector<Tensor> EendDemux::demultiplex(const Tensor& mixture, const nn::Context& /*ctx*/) const {
  if (mixture.rank() != 2 || mixture.extent(0) != config_.embed_dim) {
    throw ShapeError("demultiplex", "expected " + std::to_string(config_.embed_dim) + " x T, got " +
                                        to_string(mixture.shape()));
  }
  std::vector<Tensor> out;
  out.reserve(branches_.size());
  for (const auto& stages : branches_) {
    Tensor h = mixture;
    for (const auto& stage : stages) h = relu(stage.norm(stage.conv(h)));
    out.push_back(h);
  }
  return out;
}

Tensor EendDemux::attractor_decode(const Tensor& protos, const Tensor& mixture, const nn::Context& ctx) const {
  if (protos.rank() != 2 || protos.extent(0) != config_.embed_dim || mixture.rank() != 2 ||
      mixture.extent(0) != config_.embed_dim) {
    throw ShapeError("attractor_decode", to_string(protos.shape()) + " and " + to_string(mixture.shape()));
  }
  Tensor q = protos;
  for (const auto& block : decoder_) {
    const Tensor qs = block.norm_self(q);
    q = q + nn::apply_dropout(block.self_attn(qs, qs), config_.dropout, ctx);
    q = q + nn::apply_dropout(block.cross_attn(block.norm_cross(q), mixture), config_.dropout, ctx);
    q = q + nn::apply_dropout(block.ffn(block.norm_ffn(q), config_.dropout, ctx), config_.dropout, ctx);
  }
  return decoder_norm_(q);
}

Tensor EendDemux::existence(const Tensor& attractors) const {
  const std::size_t s = attractors.extent(1);
  return reshape(sigmoid(existence_head_(attractors)), {s});
}

ForwardResult EendDemux::forward(const Tensor& features, const nn::Context& ctx) const {
  ForwardResult r;
  auto& emb = r.embeddings;
  emb.mixture = mixture_encode(features, ctx);
  emb.demuxed = demultiplex(emb.mixture, ctx);
  emb.prototypes = prototypes(emb.demuxed);
  emb.attractors = attractor_decode(emb.prototypes, emb.mixture, ctx);
  r.output.posteriors = posteriors(emb.demuxed, emb.attractors);
  r.output.existence = existence(emb.attractors);
  r.output.valid_set = valid_speaker_set(r.output.existence.data());
  return r;
}

Tensor prototypes(std::span<const Tensor> demuxed) {
  if (demuxed.empty()) throw ShapeError("prototypes", "no speakers");
  std::vector<Tensor> cols;
  cols.reserve(demuxed.size());
  for (const auto& e : demuxed) cols.push_back(mean(e, 1));
  return concat(cols, 1);
}

Tensor posteriors(std::span<const Tensor> demuxed, const Tensor& attractors) {
  if (attractors.rank() != 2 || attractors.extent(1) != demuxed.size()) {
    throw ShapeError("posteriors", to_string(attractors.shape()) + " for " + std::to_string(demuxed.size()) + " speakers");
  }
  std::vector<Tensor> cols;
  cols.reserve(demuxed.size());
  for (std::size_t s = 0; s < demuxed.size(); ++s) {
    cols.push_back(matmul(transpose(demuxed[s]), slice(attractors, 1, s, s + 1)));
  }
  return sigmoid(concat(cols, 1));
}

std::vector<std::size_t> valid_speaker_set(std::span<const Real> p, Real threshold) {
  std::vector<std::size_t> valid;
  for (std::size_t s = 0; s < p.size(); ++s)
    if (p[s] >= threshold) valid.push_back(s);
  return valid;
}

Tensor stack_demuxed(std::span<const Tensor> demuxed) {
  if (demuxed.empty()) throw ShapeError("stack_demuxed", "no speakers");
  const std::size_t d = demuxed[0].extent(0), t = demuxed[0].extent(1), s = demuxed.size();
  std::vector<Real> out(d * t * s);
  for (std::size_t k = 0; k < s; ++k)
    for (std::size_t i = 0; i < d * t; ++i) out[i * s + k] = demuxed[k][i];
  return Tensor({d, t, s}, std::move(out));
}

}  // namespace demux
