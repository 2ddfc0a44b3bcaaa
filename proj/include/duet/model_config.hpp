#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "duet/blocks.hpp"

namespace duet {

struct ModelConfig {
  BlockConfig backbone;
  std::size_t vocab_size = 24;

  // vision encoder
  std::size_t image_size = 32;
  std::size_t patch = 8;
  std::size_t vision_dim = 64;
  std::size_t vision_heads = 2;
  std::size_t vision_mlp = 256;
  std::size_t vision_layers = 1;

  // latent codec
  std::size_t latent_factor = 4;
  std::size_t latent_channels = 4;
  std::size_t codec_hidden = 64;

  // probe network
  std::size_t probe_dim = 32;
  std::size_t probe_patch = 4;
  std::size_t probe_resolution = 32;

  // rotary base lengths; longer sequences are interpolated
  std::size_t text_base_len = 128;
  std::size_t gen_base_len = 96;

  std::size_t time_features = 64;

  std::size_t num_patches() const { return (image_size / patch) * (image_size / patch); }
  // Hidden state after this many generation blocks feeds the alignment loss.
  std::size_t repa_layer() const { return backbone.num_layers / 3; }
  BlockConfig vision_block() const;

  void validate() const;
  std::map<std::string, std::string> to_metadata() const;
  static ModelConfig from_metadata(const std::map<std::string, std::string>& meta);
};

}  // namespace duet
