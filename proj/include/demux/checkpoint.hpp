#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "demux/model.hpp"
#include "demux/speaker_encoder.hpp"

namespace demux {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Versioned binary container:
//   "DMXCKPT\0" | u32 version | u64 step | str kind | str config-json |
//   str rng-state | u64 count | count x (str name | u8 requires_grad |
//   u32 rank | u64 extents[rank] | f64 values[])
// Strings are u64 length + bytes; all integers little-endian. Tensors are
// written in name order, so identical contents give identical bytes.
struct Checkpoint {
  std::string kind;  // "eend-demux" or "speaker-encoder"
  nlohmann::json config;
  std::map<std::string, Tensor> tensors;
  std::string rng_state;
  std::uint64_t step = 0;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint make_checkpoint(const EendDemux& model);
EendDemux model_from_checkpoint(const Checkpoint& ckpt);
Checkpoint make_checkpoint(const SpeakerEncoder& encoder);
SpeakerEncoder speaker_encoder_from_checkpoint(const Checkpoint& ckpt);

// Copies every parameter value of `ckpt` into the matching tensors of
// `params` in place.
void load_parameters(nn::ParameterStore& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace demux
