#pragma once

// Joint self-attention over a unified [text ; noise] sequence. Rows before
// the boundary b are projected with the text parameter set, rows from b on
// with the generation set; attention itself is one ordinary softmax over
// the whole sequence.

#include <cstddef>
#include <span>
#include <string>
#include <utility>

#include "duet/blocks.hpp"

namespace duet {

// (text selector, generation selector) for position i of a length-`length`
// sequence with boundary b.
std::pair<int, int> modality_select(std::size_t i, std::size_t b, std::size_t length);

struct DualQkv {
  QkvWeights u;  // text rows
  QkvWeights g;  // noise rows
};

QkvProjection dual_qkv(const Tensor& seq, std::size_t boundary, const DualQkv& proj);

Tensor joint_attention(const Tensor& seq, std::size_t boundary, const DualQkv& proj,
                       const AttentionMask& mask, std::size_t num_heads,
                       const AttentionWeights& weights, std::span<const double> positions = {});

struct JointBlockWeights {
  BlockWeights shared;  // norms, output projection, MLP (its qkv is unused)
  DualQkv qkv;
};

JointBlockWeights load_joint_block(const ParamTree& params, const std::string& prefix,
                                   const BlockConfig& cfg);

Tensor joint_block_forward(const Tensor& seq, std::size_t boundary, const AttentionMask& mask,
                           const JointBlockWeights& w, const BlockConfig& cfg,
                           std::span<const double> positions = {});

}  // namespace duet
