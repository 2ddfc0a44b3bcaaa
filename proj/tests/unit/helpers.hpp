#pragma once

#include <cmath>
#include <vector>

#include "duet/model_config.hpp"
#include "duet/random.hpp"
#include "duet/tensor.hpp"

namespace testing {

inline duet::Tensor randn(const duet::Shape& shape, duet::Rng& rng, bool grad = false, double scale = 1.0) {
  std::vector<double> v(duet::shape_numel(shape));
  for (double& x : v) x = scale * rng.normal();
  return duet::Tensor(shape, std::move(v), grad);
}

inline std::vector<double> values(const duet::Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const duet::Tensor& a, const duet::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline bool bitwise_equal(const duet::Tensor& a, const duet::Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

// Small enough for per-test model builds; keeps the default 4-layer depth
// rule (alignment layer 1) intact.
inline duet::ModelConfig tiny_config() {
  duet::ModelConfig c;
  c.backbone.model_dim = 16;
  c.backbone.num_heads = 2;
  c.backbone.head_dim = 8;
  c.backbone.mlp_hidden = 32;
  c.backbone.num_layers = 3;
  c.image_size = 16;
  c.patch = 4;
  c.vision_dim = 8;
  c.vision_heads = 2;
  c.vision_mlp = 16;
  c.codec_hidden = 8;
  c.probe_dim = 8;
  c.probe_resolution = 16;
  c.time_features = 8;
  return c;
}

}  // namespace testing
