#include "duet/cross_modal.hpp"

#include <stdexcept>

#include "duet/ops.hpp"

namespace duet {

std::pair<int, int> modality_select(std::size_t i, std::size_t b, std::size_t length) {
  if (i >= length)
    throw std::out_of_range("position " + std::to_string(i) + " outside sequence of length " + std::to_string(length));
  return i < b ? std::pair{1, 0} : std::pair{0, 1};
}

namespace {

Tensor project_split(const Tensor& seq, std::size_t b, const Tensor& wu, const Tensor& bu, const Tensor& wg,
                     const Tensor& bg) {
  const std::size_t len = seq.dim(0);
  if (b == len) return linear(seq, wu, bu);
  if (b == 0) return linear(seq, wg, bg);
  return concat_rows({linear(slice_rows(seq, 0, b), wu, bu), linear(slice_rows(seq, b, len), wg, bg)});
}

}  // namespace

QkvProjection dual_qkv(const Tensor& seq, std::size_t boundary, const DualQkv& proj) {
  if (seq.rank() != 2) throw std::invalid_argument("dual_qkv expects [L, d], got " + shape_str(seq.shape()));
  if (boundary > seq.dim(0)) throw std::out_of_range("boundary beyond sequence end");
  const std::size_t d = seq.dim(1);
  for (const auto* w : {&proj.u.q_weight, &proj.u.k_weight, &proj.u.v_weight, &proj.g.q_weight, &proj.g.k_weight,
                        &proj.g.v_weight})
    if (w->rank() != 2 || w->dim(0) != d)
      throw std::invalid_argument("dual_qkv width mismatch: sequence width " + std::to_string(d) + ", weight " +
                                  shape_str(w->shape()));
  return {project_split(seq, boundary, proj.u.q_weight, proj.u.q_bias, proj.g.q_weight, proj.g.q_bias),
          project_split(seq, boundary, proj.u.k_weight, proj.u.k_bias, proj.g.k_weight, proj.g.k_bias),
          project_split(seq, boundary, proj.u.v_weight, proj.u.v_bias, proj.g.v_weight, proj.g.v_bias)};
}

Tensor joint_attention(const Tensor& seq, std::size_t boundary, const DualQkv& proj, const AttentionMask& mask,
                       std::size_t num_heads, const AttentionWeights& weights, std::span<const double> positions) {
  const QkvProjection qkv = dual_qkv(seq, boundary, proj);
  return attention(qkv.q, qkv.k, qkv.v, mask, num_heads, weights, positions);
}

JointBlockWeights load_joint_block(const ParamTree& params, const std::string& prefix, const BlockConfig& cfg) {
  JointBlockWeights w;
  w.shared = load_block(params, prefix, cfg, "u");
  w.qkv.u = w.shared.qkv;
  w.qkv.g = load_qkv(params, prefix, cfg, "g");
  return w;
}

Tensor joint_block_forward(const Tensor& seq, std::size_t boundary, const AttentionMask& mask,
                           const JointBlockWeights& w, const BlockConfig& cfg, std::span<const double> positions) {
  return residual_block(seq, mask, w.shared, cfg, positions,
                        [&](const Tensor& normed) { return dual_qkv(normed, boundary, w.qkv); });
}

}  // namespace duet
