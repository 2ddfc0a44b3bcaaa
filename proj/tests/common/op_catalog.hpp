#pragma once

// Every differentiable operation paired with a scalar-valued probe function
// and a random input, for gradient checks.

#include <functional>
#include <string>
#include <vector>

#include "duet/blocks.hpp"
#include "duet/cross_modal.hpp"
#include "duet/ops.hpp"
#include "duet/random.hpp"

namespace testing {

struct OpCase {
  std::string name;
  std::function<duet::Tensor(const duet::Tensor&)> f;
  duet::Tensor input;
};

inline duet::Tensor gaussian(const duet::Shape& shape, duet::Rng& rng, double scale = 1.0, double shift = 0.0,
                             bool grad = false) {
  std::vector<double> v(duet::shape_numel(shape));
  for (double& x : v) x = shift + scale * rng.normal();
  return duet::Tensor(shape, std::move(v), grad);
}

// Weighted sum so that every output element gets a distinct upstream grad.
inline duet::Tensor probe_sum(const duet::Tensor& y, std::uint64_t seed) {
  duet::Rng rng(seed);
  return duet::sum(duet::mul(y, gaussian(y.shape(), rng)));
}

inline std::vector<OpCase> op_catalog(std::uint64_t seed) {
  using namespace duet;
  Rng rng(seed);
  auto in = [&](const Shape& s, double scale = 1.0, double shift = 0.0) { return gaussian(s, rng, scale, shift, true); };
  const Tensor B = gaussian({3, 4}, rng), Bcol = gaussian({4}, rng), W = gaussian({4, 5}, rng), Wv = gaussian({5}, rng);
  const Tensor pos = gaussian({3, 4}, rng, 0.5, 1.5);
  std::vector<OpCase> c;
  c.push_back({"add", [=](const Tensor& x) { return probe_sum(add(x, B), 1); }, in({3, 4})});
  c.push_back({"add_broadcast", [=](const Tensor& x) { return probe_sum(add(B, x), 2); }, in({4})});
  c.push_back({"add_scalar", [=](const Tensor& x) { return probe_sum(add(x, 0.7), 3); }, in({3, 4})});
  c.push_back({"sub_lhs", [=](const Tensor& x) { return probe_sum(sub(x, B), 4); }, in({3, 4})});
  c.push_back({"sub_rhs", [=](const Tensor& x) { return probe_sum(sub(B, x), 5); }, in({3, 4})});
  c.push_back({"mul", [=](const Tensor& x) { return probe_sum(mul(x, B), 6); }, in({3, 4})});
  c.push_back({"mul_broadcast", [=](const Tensor& x) { return probe_sum(mul(B, x), 7); }, in({4})});
  c.push_back({"mul_scalar", [=](const Tensor& x) { return probe_sum(mul(x, -1.3), 8); }, in({3, 4})});
  c.push_back({"div_lhs", [=](const Tensor& x) { return probe_sum(div(x, pos), 9); }, in({3, 4})});
  c.push_back({"div_rhs", [=](const Tensor& x) { return probe_sum(div(B, x), 10); }, in({3, 4}, 0.3, 2.0)});
  c.push_back({"neg", [=](const Tensor& x) { return probe_sum(neg(x), 11); }, in({3, 4})});
  c.push_back({"matmul_lhs", [=](const Tensor& x) { return probe_sum(matmul(x, W), 12); }, in({3, 4})});
  c.push_back({"matmul_rhs", [=](const Tensor& x) { return probe_sum(matmul(B, x), 13); }, in({4, 2})});
  c.push_back({"matmul_batched", [=](const Tensor& x) { return probe_sum(matmul(x, W), 14); }, in({2, 3, 4})});
  c.push_back({"transpose", [=](const Tensor& x) { return probe_sum(transpose(x), 15); }, in({2, 3, 4})});
  c.push_back({"reshape", [=](const Tensor& x) { return probe_sum(reshape(x, {4, 3}), 16); }, in({3, 4})});
  c.push_back({"softmax", [=](const Tensor& x) { return probe_sum(softmax(x), 17); }, in({2, 5})});
  c.push_back({"softmax_axis0", [=](const Tensor& x) { return probe_sum(softmax(x, 0), 18); }, in({3, 4})});
  c.push_back({"rms_norm_x", [=](const Tensor& x) { return probe_sum(rms_norm(x, Bcol), 19); }, in({3, 4})});
  c.push_back({"rms_norm_weight", [=](const Tensor& x) { return probe_sum(rms_norm(B, x), 20); }, in({4})});
  c.push_back({"cross_entropy", [=](const Tensor& x) {
                 const std::vector<std::size_t> t = {1, 4, 0};
                 return cross_entropy(x, t);
               },
               in({3, 5})});
  c.push_back({"bce_with_logits", [=](const Tensor& x) {
                 return bce_with_logits(x, Tensor({2, 3}, {1, 0, 1, 0, 0, 1}));
               },
               in({2, 3}, 2.0)});
  c.push_back({"silu", [=](const Tensor& x) { return probe_sum(silu(x), 21); }, in({3, 4})});
  c.push_back({"sigmoid", [=](const Tensor& x) { return probe_sum(sigmoid(x), 22); }, in({3, 4})});
  c.push_back({"tanh", [=](const Tensor& x) { return probe_sum(tanh(x), 23); }, in({3, 4})});
  c.push_back({"exp", [=](const Tensor& x) { return probe_sum(exp(x), 24); }, in({3, 4})});
  c.push_back({"log", [=](const Tensor& x) { return probe_sum(log(x), 25); }, in({3, 4}, 0.3, 2.0)});
  c.push_back({"sqrt", [=](const Tensor& x) { return probe_sum(sqrt(x), 26); }, in({3, 4}, 0.3, 2.0)});
  c.push_back({"square", [=](const Tensor& x) { return probe_sum(square(x), 27); }, in({3, 4})});
  c.push_back({"sum", [=](const Tensor& x) { return mul(sum(x), 1.7); }, in({3, 4})});
  c.push_back({"mean", [=](const Tensor& x) { return mul(mean(x), 1.7); }, in({3, 4})});
  c.push_back({"sum_last", [=](const Tensor& x) { return probe_sum(sum_last(x), 28); }, in({3, 4})});
  c.push_back({"mean_rows", [=](const Tensor& x) { return probe_sum(mean_rows(x), 29); }, in({3, 4})});
  c.push_back({"slice_rows", [=](const Tensor& x) { return probe_sum(slice_rows(x, 1, 3), 30); }, in({4, 3})});
  c.push_back({"concat_rows", [=](const Tensor& x) { return probe_sum(concat_rows({B, x, x}), 31); }, in({2, 4})});
  c.push_back({"embedding", [=](const Tensor& x) {
                 const std::vector<std::size_t> ids = {2, 0, 2, 1};
                 return probe_sum(embedding(x, ids), 32);
               },
               in({3, 4})});
  c.push_back({"gather", [=](const Tensor& x) { return probe_sum(gather(x, {2, 3}, {0, -1, 5, 5, 11, 3}), 33); }, in({3, 4})});
  c.push_back({"patchify", [=](const Tensor& x) { return probe_sum(patchify(x, 8, 4), 34); }, in({64})});
  c.push_back({"unpatchify", [=](const Tensor& x) { return probe_sum(unpatchify(x, 8, 4), 35); }, in({4, 16})});
  c.push_back({"linear_x", [=](const Tensor& x) { return probe_sum(linear(x, W, Wv), 36); }, in({3, 4})});
  c.push_back({"linear_w", [=](const Tensor& x) { return probe_sum(linear(B, x, Wv), 37); }, in({4, 5})});
  c.push_back({"linear_b", [=](const Tensor& x) { return probe_sum(linear(B, W, x), 38); }, in({5})});
  c.push_back({"mse_loss", [=](const Tensor& x) { return mse_loss(x, B); }, in({3, 4})});

  // attention pieces
  const std::size_t L = 5, H = 2, hd = 4, d = H * hd;
  const Tensor Q = gaussian({L, d}, rng), K = gaussian({L, d}, rng), V = gaussian({L, d}, rng);
  const std::vector<double> positions = {0, 1, 2, 3, 4};
  c.push_back({"apply_rope", [=](const Tensor& x) { return probe_sum(apply_rope(x, positions, H), 39); }, in({L, d})});
  c.push_back({"attention_core_q", [=](const Tensor& x) { return probe_sum(attention_core(x, K, V, AttentionMask::causal(L), H), 40); },
               in({L, d})});
  c.push_back({"attention_core_k", [=](const Tensor& x) { return probe_sum(attention_core(Q, x, V, AttentionMask::full(L), H), 41); },
               in({L, d})});
  c.push_back({"attention_core_v", [=](const Tensor& x) { return probe_sum(attention_core(Q, K, x, AttentionMask::causal(L), H), 42); },
               in({L, d})});
  return c;
}

}  // namespace testing
