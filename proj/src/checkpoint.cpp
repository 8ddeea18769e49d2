#include "demux/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace demux {
namespace {

constexpr char kMagic[8] = {'D', 'M', 'X', 'C', 'K', 'P', 'T', '\0'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kParamPrefix = "param.";

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}
  template <typename T>
  void pod(T v) {
    out_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}
  template <typename T>
  T pod() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in_) throw CheckpointError("checkpoint truncated");
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    if (n > (std::uint64_t{1} << 32)) throw CheckpointError("checkpoint string too long");
    std::string s(n, '\0');
    in_.read(s.data(), static_cast<std::streamsize>(n));
    if (!in_) throw CheckpointError("checkpoint truncated");
    return s;
  }

 private:
  std::istream& in_;
};

std::map<std::string, Tensor> export_params(const nn::ParameterStore& params) {
  std::map<std::string, Tensor> out;
  for (const auto& [name, t] : params.all()) out.emplace(kParamPrefix + name, t);
  return out;
}

nn::ParameterStore import_params(const Checkpoint& ckpt) {
  nn::ParameterStore store;
  for (const auto& [key, t] : ckpt.tensors) {
    if (!key.starts_with(kParamPrefix)) continue;
    const Tensor p = store.create_constant(key.substr(std::strlen(kParamPrefix)), t.shape(), 0);
    Tensor handle = p;
    std::copy(t.data().begin(), t.data().end(), handle.mutable_data().begin());
    handle.set_requires_grad(t.requires_grad());
  }
  return store;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  Writer w(out);
  out.write(kMagic, sizeof(kMagic));
  w.pod(kVersion);
  w.pod<std::uint64_t>(ckpt.step);
  w.str(ckpt.kind);
  w.str(ckpt.config.dump());
  w.str(ckpt.rng_state);
  w.pod<std::uint64_t>(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    w.str(name);
    w.pod<std::uint8_t>(t.requires_grad() ? 1 : 0);
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) w.pod<std::uint64_t>(e);
    for (auto v : t.data()) w.pod<double>(static_cast<double>(v));
  }
  if (!out) throw CheckpointError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError(path.string() + ": not a checkpoint");
  Reader r(in);
  const auto version = r.pod<std::uint32_t>();
  if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.step = r.pod<std::uint64_t>();
  ckpt.kind = r.str();
  try {
    ckpt.config = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint config: ") + e.what());
  }
  ckpt.rng_state = r.str();
  const auto count = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const bool requires_grad = r.pod<std::uint8_t>() != 0;
    const auto rank = r.pod<std::uint32_t>();
    if (rank > 8) throw CheckpointError("tensor '" + name + "' has implausible rank");
    ad::Shape shape(rank);
    for (auto& e : shape) e = r.pod<std::uint64_t>();
    std::vector<Real> values(ad::numel(shape));
    for (auto& v : values) v = static_cast<Real>(r.pod<double>());
    ckpt.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(values), requires_grad));
  }
  return ckpt;
}

Checkpoint make_checkpoint(const EendDemux& model) {
  Checkpoint ckpt;
  ckpt.kind = "eend-demux";
  ckpt.config = model.config();
  ckpt.tensors = export_params(model.parameters());
  return ckpt;
}

EendDemux model_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "eend-demux") throw CheckpointError("expected an eend-demux checkpoint, got '" + ckpt.kind + "'");
  return EendDemux(ckpt.config.get<ModelConfig>(), import_params(ckpt));
}

Checkpoint make_checkpoint(const SpeakerEncoder& encoder) {
  Checkpoint ckpt;
  ckpt.kind = "speaker-encoder";
  ckpt.config = encoder.config();
  ckpt.tensors = export_params(encoder.parameters());
  return ckpt;
}

SpeakerEncoder speaker_encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.kind != "speaker-encoder") {
    throw CheckpointError("expected a speaker-encoder checkpoint, got '" + ckpt.kind + "'");
  }
  return SpeakerEncoder(ckpt.config.get<ModelConfig>(), import_params(ckpt));
}

void load_parameters(nn::ParameterStore& params, const Checkpoint& ckpt, const std::string& prefix) {
  for (const auto& [name, t] : params.all()) {
    if (!name.starts_with(prefix)) continue;
    auto it = ckpt.tensors.find(kParamPrefix + name);
    if (it == ckpt.tensors.end()) throw CheckpointError("checkpoint lacks parameter '" + name + "'");
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("parameter '" + name + "': checkpoint " + ad::to_string(it->second.shape()) + " vs model " +
                            ad::to_string(t.shape()));
    }
    Tensor handle = t;
    std::copy(it->second.data().begin(), it->second.data().end(), handle.mutable_data().begin());
  }
}

}  // namespace demux
