#pragma once

// Transformer building blocks shared by both branches: masks, rotary
// positions with index interpolation, multi-head attention with optional
// QK-norm, and the pre-norm residual block.
//
// Parameter naming: {branch}.layer{i}.{attn|mlp|norm}.{name}

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "duet/param_tree.hpp"
#include "duet/random.hpp"
#include "duet/tensor.hpp"

namespace duet {

struct BlockConfig {
  std::size_t model_dim = 128;
  std::size_t num_heads = 4;
  std::size_t head_dim = 32;
  std::size_t mlp_hidden = 512;
  bool qk_norm = true;
  bool qkv_bias = true;
  std::size_t num_layers = 4;

  void validate() const;
};

// mask[i][j] is true iff token i may attend to token j.
class AttentionMask {
 public:
  AttentionMask(std::size_t size, std::vector<std::uint8_t> allowed);
  static AttentionMask causal(std::size_t size);
  static AttentionMask full(std::size_t size);

  std::size_t size() const { return size_; }
  bool allowed(std::size_t i, std::size_t j) const { return allowed_[i * size_ + j] != 0; }
  std::size_t row_count(std::size_t i) const;

 private:
  std::size_t size_;
  std::vector<std::uint8_t> allowed_;
};

AttentionMask build_causal_mask(std::size_t length);

inline constexpr double kRopeTheta = 10000.0;
inline constexpr double kMaxPositionExtension = 8.0;

// Positions 0..length-1, compressed by base_len/length once the sequence is
// longer than base_len. Throws when length exceeds base_len * max_extension.
std::vector<double> position_indices(std::size_t length, std::size_t base_len,
                                     double max_extension = kMaxPositionExtension);

// Rotates each (2p, 2p+1) pair inside every head by pos * theta^(-2p/head_dim).
Tensor apply_rope(const Tensor& x, std::span<const double> positions, std::size_t num_heads,
                  double theta = kRopeTheta);
Tensor apply_positions(const Tensor& x, std::size_t base_len, std::size_t num_heads);

// softmax(Q_h K_h^T / sqrt(head_dim) + mask) V_h per head, heads concatenated.
// Q, K, V are [L, d] with heads laid out contiguously along d.
Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                      std::size_t num_heads);

struct AttentionWeights {
  Tensor q_norm;  // [head_dim]; undefined disables QK-norm
  Tensor k_norm;
  Tensor out_weight;  // [d, d]
  Tensor out_bias;    // [d]
};

// Per-head QK-norm, rotary positions (skipped when `positions` is empty),
// scaled dot-product attention, then the output projection.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                 std::size_t num_heads, const AttentionWeights& weights,
                 std::span<const double> positions = {});

struct QkvWeights {
  Tensor q_weight, q_bias;
  Tensor k_weight, k_bias;
  Tensor v_weight, v_bias;
};

struct QkvProjection {
  Tensor q, k, v;
};

QkvProjection project_qkv(const Tensor& x, const QkvWeights& w);

struct BlockWeights {
  Tensor attn_norm;
  Tensor mlp_norm;
  QkvWeights qkv;
  AttentionWeights attn;
  Tensor mlp_up_weight, mlp_up_bias;
  Tensor mlp_down_weight, mlp_down_bias;
};

// `qkv_group` selects "attn.<group>.q_weight" style names; empty means
// "attn.q_weight".
BlockWeights load_block(const ParamTree& params, const std::string& prefix, const BlockConfig& cfg,
                        const std::string& qkv_group = "");
QkvWeights load_qkv(const ParamTree& params, const std::string& prefix, const BlockConfig& cfg,
                    const std::string& qkv_group);
void init_qkv(ParamTree& params, const std::string& prefix, const BlockConfig& cfg, Branch branch,
              Rng& rng, const std::string& qkv_group);
void init_block(ParamTree& params, const std::string& prefix, const BlockConfig& cfg, Branch branch,
                Rng& rng, const std::string& qkv_group = "");

using QkvProjector = std::function<QkvProjection(const Tensor& normed)>;

// x + attn(norm(x)), then h + mlp(norm(h)); the projector maps normed rows
// to Q, K, V.
Tensor residual_block(const Tensor& x, const AttentionMask& mask, const BlockWeights& w,
                      const BlockConfig& cfg, std::span<const double> positions,
                      const QkvProjector& project);

Tensor block_forward(const Tensor& x, const AttentionMask& mask, const BlockWeights& w,
                     const BlockConfig& cfg, std::span<const double> positions = {});

// Gaussian init helper used by all modules.
Tensor random_normal(const Shape& shape, double stddev, Rng& rng, bool requires_grad = true);

}  // namespace duet
