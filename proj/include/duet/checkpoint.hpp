#pragma once

// Binary checkpoint container; byte layout in docs/checkpoint-format.md.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "duet/optim.hpp"
#include "duet/param_tree.hpp"

namespace duet {

struct CheckpointTensor {
  std::string name;
  std::string tag;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(const std::string& name) const;
  const std::string& meta(const std::string& key) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

// Writes through a temporary file and renames, so a crash never leaves a
// truncated checkpoint behind.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

// Tensor names are "param/<name>" with the branch as tag.
void store_params(Checkpoint& ckpt, const ParamTree& params);
ParamTree load_params(const Checkpoint& ckpt);

// Tensor names "adam.m/<name>", "adam.v/<name>"; step in metadata.
void store_optimizer(Checkpoint& ckpt, const AdamW& opt);
AdamW load_optimizer(const Checkpoint& ckpt, AdamWConfig config = {});

// Frozen, untagged tensors (codec, probe): "asset/<group>/<name>".
void store_assets(Checkpoint& ckpt, const std::string& group, const std::map<std::string, Tensor>& assets);
std::map<std::string, Tensor> load_assets(const Checkpoint& ckpt, const std::string& group);

}  // namespace duet
