#pragma once

// Latent codec: a patchwise autoencoder (stride = kernel = latent_factor)
// mapping a size x size image to a (size/f) x (size/f) x C latent grid.
// Latents are normalized per channel with statistics fitted on the training
// images. Trained once, then frozen.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "duet/model_config.hpp"
#include "duet/random.hpp"
#include "duet/tensor.hpp"

namespace duet {

class Codec {
 public:
  Codec() = default;
  Codec(const ModelConfig& cfg, Rng& rng);
  static Codec from_assets(const ModelConfig& cfg, std::map<std::string, Tensor> assets);

  const std::map<std::string, Tensor>& assets() const { return w_; }
  std::map<std::string, Tensor>& trainable() { return w_; }
  std::size_t factor() const { return factor_; }
  std::size_t channels() const { return channels_; }
  std::size_t latent_side(std::size_t image_size) const;

  // Differentiable, unnormalized: image (size^2) -> [h*w, C] and back.
  Tensor encode_raw(const Tensor& image, std::size_t size) const;
  Tensor decode_raw(const Tensor& latent, std::size_t size) const;

  // Normalized latents, no gradient.
  Tensor encode(const std::vector<double>& image, std::size_t size) const;
  // Pixels clipped to [0, 1].
  std::vector<double> decode(const Tensor& latent, std::size_t size) const;

  void fit_normalization(const std::vector<std::vector<double>>& images, std::size_t size);
  double reconstruction_mse(const std::vector<std::vector<double>>& images, std::size_t size) const;

 private:
  std::size_t factor_ = 4;
  std::size_t channels_ = 4;
  std::map<std::string, Tensor> w_;
};

struct CodecTraining {
  std::size_t steps = 1500;
  std::size_t batch = 8;
  double learning_rate = 3e-3;
};

// Returns the final training-batch reconstruction MSE.
double train_codec(Codec& codec, const std::vector<std::vector<double>>& images, std::size_t size,
                   const CodecTraining& opts, Rng& rng);

}  // namespace duet
