#include "duet/model_config.hpp"

#include <stdexcept>

namespace duet {

BlockConfig ModelConfig::vision_block() const {
  BlockConfig b;
  b.model_dim = vision_dim;
  b.num_heads = vision_heads;
  b.head_dim = vision_dim / vision_heads;
  b.mlp_hidden = vision_mlp;
  b.num_layers = vision_layers;
  return b;
}

void ModelConfig::validate() const {
  backbone.validate();
  vision_block().validate();
  if (patch == 0 || image_size % patch != 0) throw std::invalid_argument("image_size must be a multiple of patch");
  if (latent_factor == 0 || image_size % latent_factor != 0)
    throw std::invalid_argument("image_size must be a multiple of latent_factor");
  if (probe_patch == 0 || probe_resolution % probe_patch != 0)
    throw std::invalid_argument("probe_resolution must be a multiple of probe_patch");
  if (repa_layer() == 0) throw std::invalid_argument("backbone needs at least 3 layers for the alignment layer");
  if (time_features % 2 != 0) throw std::invalid_argument("time_features must be even");
}

std::map<std::string, std::string> ModelConfig::to_metadata() const {
  auto s = [](std::size_t v) { return std::to_string(v); };
  return {{"config.model_dim", s(backbone.model_dim)},
          {"config.num_heads", s(backbone.num_heads)},
          {"config.mlp_hidden", s(backbone.mlp_hidden)},
          {"config.num_layers", s(backbone.num_layers)},
          {"config.qk_norm", s(backbone.qk_norm)},
          {"config.qkv_bias", s(backbone.qkv_bias)},
          {"config.vocab_size", s(vocab_size)},
          {"config.image_size", s(image_size)},
          {"config.patch", s(patch)},
          {"config.vision_dim", s(vision_dim)},
          {"config.vision_heads", s(vision_heads)},
          {"config.vision_mlp", s(vision_mlp)},
          {"config.vision_layers", s(vision_layers)},
          {"config.latent_factor", s(latent_factor)},
          {"config.latent_channels", s(latent_channels)},
          {"config.codec_hidden", s(codec_hidden)},
          {"config.probe_dim", s(probe_dim)},
          {"config.probe_patch", s(probe_patch)},
          {"config.probe_resolution", s(probe_resolution)},
          {"config.text_base_len", s(text_base_len)},
          {"config.gen_base_len", s(gen_base_len)},
          {"config.time_features", s(time_features)}};
}

ModelConfig ModelConfig::from_metadata(const std::map<std::string, std::string>& meta) {
  auto get = [&meta](const std::string& key) -> std::size_t {
    auto it = meta.find("config." + key);
    if (it == meta.end()) throw std::runtime_error("checkpoint metadata lacks config." + key);
    return std::stoull(it->second);
  };
  ModelConfig c;
  c.backbone.model_dim = get("model_dim");
  c.backbone.num_heads = get("num_heads");
  c.backbone.head_dim = c.backbone.model_dim / c.backbone.num_heads;
  c.backbone.mlp_hidden = get("mlp_hidden");
  c.backbone.num_layers = get("num_layers");
  c.backbone.qk_norm = get("qk_norm") != 0;
  c.backbone.qkv_bias = get("qkv_bias") != 0;
  c.vocab_size = get("vocab_size");
  c.image_size = get("image_size");
  c.patch = get("patch");
  c.vision_dim = get("vision_dim");
  c.vision_heads = get("vision_heads");
  c.vision_mlp = get("vision_mlp");
  c.vision_layers = get("vision_layers");
  c.latent_factor = get("latent_factor");
  c.latent_channels = get("latent_channels");
  c.codec_hidden = get("codec_hidden");
  c.probe_dim = get("probe_dim");
  c.probe_patch = get("probe_patch");
  c.probe_resolution = get("probe_resolution");
  c.text_base_len = get("text_base_len");
  c.gen_base_len = get("gen_base_len");
  c.time_features = get("time_features");
  c.validate();
  return c;
}

}  // namespace duet
