#pragma once

// Flow-matching image branch. The backbone runs joint attention over
// [C ; N]: C are conditioning rows (final LM states of the understanding
// branch over the report), N the projected noisy latent tokens plus time and
// grid embeddings. Linear path x_t = (1-t) x0 + t x1 with target u = x1 - x0;
// Euler integration from t = 0 to 1 samples.

#include <cstddef>
#include <vector>

#include "duet/model_config.hpp"
#include "duet/param_tree.hpp"
#include "duet/random.hpp"
#include "duet/tensor.hpp"

namespace duet {

void init_generation(ParamTree& params, const ModelConfig& cfg, Rng& rng);

// Copies each understanding LM layer into the matching generation layer:
// both QKV sets take the understanding QKV, the shared parts take the rest.
void inherit_backbone(ParamTree& params, const ModelConfig& cfg);

struct FlowState {
  Tensor x0;  // noise
  Tensor x1;  // data
  Tensor xt;
  Tensor ut;
  double t = 0.0;
};

FlowState flow_state_at(const Tensor& x0, const Tensor& x1, double t);
FlowState flow_sample_training_pair(const Tensor& x1, Rng& rng);

Tensor time_embedding(const ParamTree& params, const ModelConfig& cfg, double t);  // [1, d]
// Fixed sin/cos embedding of normalized grid coordinates, independent of
// the grid size.
Tensor latent_grid_embedding(std::size_t side, std::size_t dim);  // [side^2, d]
Tensor latent_project_in(const ParamTree& params, const Tensor& latent);   // [hw, C] -> [hw, d]
Tensor latent_project_out(const ParamTree& params, const Tensor& hidden);  // [hw, d] -> [hw, C]

struct VelocityOutput {
  Tensor velocity;     // [hw, C]
  Tensor repa_hidden;  // noise rows after cfg.repa_layer() blocks, [hw, d]
};

VelocityOutput velocity_field(const ParamTree& params, const ModelConfig& cfg, const Tensor& cond,
                              const Tensor& xt, double t);

Tensor flow_loss(const Tensor& predicted, const Tensor& target);

// Alignment head: d -> d -> probe_dim.
Tensor repa_project(const ParamTree& params, const Tensor& hidden);
// Row-wise cosine similarity of two [n, k] tensors -> [n].
Tensor row_cosine(const Tensor& a, const Tensor& b);
// Negative mean cosine between projected hidden rows and probe features.
Tensor repa_loss(const ParamTree& params, const Tensor& hidden, const Tensor& probe_features);

struct SampleOptions {
  std::size_t steps = 50;
  std::size_t latent_side = 8;
};

// Euler integration of the learned field from pure noise drawn from `rng`.
Tensor sample_latent(const ParamTree& params, const ModelConfig& cfg, const Tensor& cond, const SampleOptions& options,
                     Rng& rng);

}  // namespace duet
