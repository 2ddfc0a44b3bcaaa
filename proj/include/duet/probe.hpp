#pragma once

// Frozen feature extractor shared by the metrics and the alignment loss:
// patch embedding + learned positions, one 3x3 convolution over the patch
// grid, mean pooling, and a K-way multi-label head used only to train it.
// Inputs larger than probe_resolution are box-downsampled first.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "duet/model_config.hpp"
#include "duet/random.hpp"
#include "duet/synthetic.hpp"
#include "duet/tensor.hpp"

namespace duet {

class Probe {
 public:
  Probe() = default;
  Probe(const ModelConfig& cfg, Rng& rng);
  static Probe from_assets(const ModelConfig& cfg, std::map<std::string, Tensor> assets);

  const std::map<std::string, Tensor>& assets() const { return w_; }
  std::map<std::string, Tensor>& trainable() { return w_; }
  std::size_t dim() const { return dim_; }
  std::size_t grid() const { return resolution_ / patch_; }

  // Differentiable in the weights. image: resolution^2 pixels.
  Tensor token_features(const Tensor& image) const;  // [grid^2, dim]
  Tensor logits(const Tensor& token_features) const;  // [1, K]

  // No gradient; any multiple of the probe resolution.
  std::vector<double> prepare(const std::vector<double>& image, std::size_t size) const;
  Tensor tokens(const std::vector<double>& image, std::size_t size) const;
  std::vector<double> features(const std::vector<double>& image, std::size_t size) const;  // pooled, [dim]
  Labels predict(const std::vector<double>& image, std::size_t size) const;

  std::string hash() const;

 private:
  std::size_t dim_ = 32;
  std::size_t patch_ = 4;
  std::size_t resolution_ = 32;
  std::vector<std::ptrdiff_t> im2col_;
  std::map<std::string, Tensor> w_;

  void build_im2col();
};

struct ProbeTraining {
  std::size_t steps = 1200;
  std::size_t batch = 16;
  double learning_rate = 3e-3;
};

// Returns held-out per-finding accuracy on `eval`.
double train_probe(Probe& probe, const Corpus& corpus, const ProbeTraining& opts, Rng& rng);
double probe_accuracy(const Probe& probe, const Corpus& corpus, const std::vector<std::size_t>& indices);

}  // namespace duet
