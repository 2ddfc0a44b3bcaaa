#include <doctest.h>

#include <cmath>

#include "duet/blocks.hpp"
#include "duet/grad_check.hpp"
#include "duet/ops.hpp"
#include "duet/param_tree.hpp"
#include "helpers.hpp"
#include "op_catalog.hpp"

using namespace duet;

namespace {

// Naive per-head reference: optional RMS QK-norm, rotary positions,
// masked softmax, output projection.
std::vector<double> attention_oracle(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                                     std::size_t heads, const AttentionWeights& w, const std::vector<double>& pos) {
  const std::size_t L = q.dim(0), d = q.dim(1), hd = d / heads;
  std::vector<double> Q(q.data().begin(), q.data().end()), K(k.data().begin(), k.data().end());
  auto norm_rows = [&](std::vector<double>& X, const Tensor& wt) {
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t h = 0; h < heads; ++h) {
        double ss = 0.0;
        for (std::size_t j = 0; j < hd; ++j) ss += X[i * d + h * hd + j] * X[i * d + h * hd + j];
        const double r = 1.0 / std::sqrt(ss / static_cast<double>(hd) + 1e-6);
        for (std::size_t j = 0; j < hd; ++j) X[i * d + h * hd + j] *= r * wt.data()[j];
      }
  };
  if (w.q_norm.defined()) {
    norm_rows(Q, w.q_norm);
    norm_rows(K, w.k_norm);
  }
  auto rotate = [&](std::vector<double>& X) {
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t p = 0; p < hd / 2; ++p) {
          const double ang = pos[i] * std::pow(kRopeTheta, -2.0 * static_cast<double>(p) / static_cast<double>(hd));
          double& a = X[i * d + h * hd + 2 * p];
          double& b = X[i * d + h * hd + 2 * p + 1];
          const double na = a * std::cos(ang) - b * std::sin(ang), nb = a * std::sin(ang) + b * std::cos(ang);
          a = na;
          b = nb;
        }
  };
  if (!pos.empty()) {
    rotate(Q);
    rotate(K);
  }
  std::vector<double> heads_out(L * d, 0.0);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t i = 0; i < L; ++i) {
      std::vector<double> s(L, -INFINITY);
      double mx = -INFINITY;
      for (std::size_t j = 0; j < L; ++j) {
        if (!mask.allowed(i, j)) continue;
        double dot = 0.0;
        for (std::size_t c = 0; c < hd; ++c) dot += Q[i * d + h * hd + c] * K[j * d + h * hd + c];
        s[j] = dot / std::sqrt(static_cast<double>(hd));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) z += mask.allowed(i, j) ? std::exp(s[j] - mx) : 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (!mask.allowed(i, j)) continue;
        const double p = std::exp(s[j] - mx) / z;
        for (std::size_t c = 0; c < hd; ++c) heads_out[i * d + h * hd + c] += p * v.data()[j * d + h * hd + c];
      }
    }
  std::vector<double> out(L * d, 0.0);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t o = 0; o < d; ++o) {
      double acc = w.out_bias.defined() ? w.out_bias.data()[o] : 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += heads_out[i * d + c] * w.out_weight.data()[c * d + o];
      out[i * d + o] = acc;
    }
  return out;
}

BlockConfig small_config() {
  BlockConfig c;
  c.model_dim = 16;
  c.num_heads = 2;
  c.head_dim = 8;
  c.mlp_hidden = 32;
  c.num_layers = 1;
  return c;
}

}  // namespace

TEST_CASE("block config defaults and validation") {
  const BlockConfig c;
  CHECK(c.qk_norm);
  CHECK(c.qkv_bias);
  CHECK(c.model_dim == 128);
  CHECK(c.num_layers == 4);
  BlockConfig bad = c;
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("causal mask") {
  const auto m1 = build_causal_mask(1);
  CHECK(m1.allowed(0, 0));
  const auto m3 = build_causal_mask(3);
  CHECK(m3.row_count(0) == 1);
  CHECK(m3.row_count(1) == 2);
  CHECK(m3.row_count(2) == 3);
  CHECK_FALSE(build_causal_mask(8).allowed(2, 5));
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) CHECK(build_causal_mask(8).allowed(i, j) == (j <= i));
}

TEST_CASE("attention with one token returns the projected value row") {
  Rng rng(1);
  const Tensor q = testing::randn({1, 4}, rng), k = testing::randn({1, 4}, rng), v = testing::randn({1, 4}, rng);
  AttentionWeights w;
  w.out_weight = testing::randn({4, 4}, rng);
  const Tensor out = attention(q, k, v, AttentionMask::full(1), 2, w);
  CHECK(testing::max_abs_diff(out, matmul(v, w.out_weight)) < 1e-14);
}

TEST_CASE("attention equals the brute-force per-head oracle") {
  Rng rng(2);
  const std::size_t L = 5, H = 2, d = 8;
  const Tensor q = testing::randn({L, d}, rng), k = testing::randn({L, d}, rng), v = testing::randn({L, d}, rng);
  AttentionWeights w;
  w.out_weight = testing::randn({d, d}, rng);
  w.out_bias = testing::randn({d}, rng);
  for (const bool causal : {false, true}) {
    const AttentionMask mask = causal ? AttentionMask::causal(L) : AttentionMask::full(L);
    const auto expect = attention_oracle(q, k, v, mask, H, w, {});
    const Tensor got = attention(q, k, v, mask, H, w);
    CHECK(testing::max_abs_diff(got, Tensor({L, d}, expect)) < 1e-10);
  }
  w.q_norm = testing::randn({d / H}, rng);
  w.k_norm = testing::randn({d / H}, rng);
  const std::vector<double> pos = {0, 1, 2, 3, 4};
  const auto expect = attention_oracle(q, k, v, AttentionMask::causal(L), H, w, pos);
  CHECK(testing::max_abs_diff(attention(q, k, v, AttentionMask::causal(L), H, w, pos), Tensor({L, d}, expect)) < 1e-10);
}

TEST_CASE("causal attention: token 0 ignores later tokens") {
  Rng rng(3);
  const std::size_t L = 6, d = 8;
  Tensor q = testing::randn({L, d}, rng), k = testing::randn({L, d}, rng), v = testing::randn({L, d}, rng);
  AttentionWeights w;
  w.out_weight = testing::randn({d, d}, rng);
  const Tensor base = attention(q, k, v, build_causal_mask(L), 2, w);
  for (std::size_t i = d; i < L * d; ++i) {
    k.mutable_data()[i] += 3.0;
    v.mutable_data()[i] -= 2.0;
    q.mutable_data()[i] *= -1.0;
  }
  const Tensor after = attention(q, k, v, build_causal_mask(L), 2, w);
  for (std::size_t c = 0; c < d; ++c) CHECK(after.data()[c] == base.data()[c]);
}

TEST_CASE("permuting masked-out tokens leaves unmasked outputs unchanged") {
  Rng rng(4);
  const std::size_t L = 6, d = 8;
  const Tensor q = testing::randn({L, d}, rng), k = testing::randn({L, d}, rng), v = testing::randn({L, d}, rng);
  AttentionWeights w;
  w.out_weight = testing::randn({d, d}, rng);
  const Tensor base = attention(q, k, v, build_causal_mask(L), 2, w);
  // swap rows 4 and 5 (masked out for rows 0..3)
  auto swap_rows = [&](const Tensor& t) {
    std::vector<double> x(t.data().begin(), t.data().end());
    for (std::size_t c = 0; c < d; ++c) std::swap(x[4 * d + c], x[5 * d + c]);
    return Tensor({L, d}, x);
  };
  const Tensor after = attention(swap_rows(q), swap_rows(k), swap_rows(v), build_causal_mask(L), 2, w);
  for (std::size_t i = 0; i < 4 * d; ++i) CHECK(after.data()[i] == base.data()[i]);
}

TEST_CASE("all-masked row and size mismatch are errors") {
  const Tensor x = Tensor::zeros({2, 4});
  AttentionWeights w;
  w.out_weight = Tensor::zeros({4, 4});
  const AttentionMask none(2, {1, 0, 0, 0});
  CHECK_THROWS_AS(attention(x, x, x, none, 2, w), std::invalid_argument);
  CHECK_THROWS_AS(attention(x, x, x, AttentionMask::full(3), 2, w), std::invalid_argument);
}

TEST_CASE("QK-norm keeps attention finite for huge inputs") {
  Rng rng(5);
  const std::size_t L = 4, d = 8;
  const Tensor q = mul(testing::randn({L, d}, rng), 1e6), k = mul(testing::randn({L, d}, rng), 1e6),
               v = testing::randn({L, d}, rng);
  AttentionWeights w;
  w.out_weight = testing::randn({d, d}, rng);
  w.q_norm = Tensor::full({4}, 1.0);
  w.k_norm = Tensor::full({4}, 1.0);
  for (double x : attention(q, k, v, build_causal_mask(L), 2, w).data()) CHECK(std::isfinite(x));
}

TEST_CASE("rotary positions") {
  Rng rng(6);
  const std::size_t L = 6, d = 8, H = 2;
  const Tensor x = testing::randn({L, d}, rng);
  const Tensor y = apply_positions(x, 16, H);
  for (std::size_t c = 0; c < d; ++c) CHECK(y.data()[c] == x.data()[c]);
  for (std::size_t i = 0; i < L; ++i)
    for (std::size_t p = 0; p < d / 2; ++p) {
      const double a = std::hypot(x.data()[i * d + 2 * p], x.data()[i * d + 2 * p + 1]);
      const double b = std::hypot(y.data()[i * d + 2 * p], y.data()[i * d + 2 * p + 1]);
      CHECK(std::abs(a - b) < 1e-12);
    }
  // L = 2 * base: token 2k lands on position k
  const std::size_t base = 8;
  const auto interp = position_indices(2 * base, base);
  const auto plain = position_indices(base, base);
  for (std::size_t kk = 0; kk < base; ++kk) CHECK(interp[2 * kk] == plain[kk]);
  // and the rotation tables agree: rotate a row at token 2k vs token k
  const Tensor row = testing::randn({1, d}, rng);
  std::vector<double> rows2(2 * base * d), rows1(base * d);
  for (std::size_t i = 0; i < 2 * base; ++i) std::copy(row.data().begin(), row.data().end(), rows2.begin() + i * d);
  for (std::size_t i = 0; i < base; ++i) std::copy(row.data().begin(), row.data().end(), rows1.begin() + i * d);
  const Tensor r2 = apply_positions(Tensor({2 * base, d}, rows2), base, H);
  const Tensor r1 = apply_positions(Tensor({base, d}, rows1), base, H);
  for (std::size_t kk = 0; kk < base; ++kk)
    for (std::size_t c = 0; c < d; ++c) CHECK(r2.data()[2 * kk * d + c] == r1.data()[kk * d + c]);
  CHECK_THROWS_AS(position_indices(8 * base + 1, base), std::out_of_range);
}

TEST_CASE("block forward") {
  const BlockConfig cfg = small_config();
  Rng rng(7);
  ParamTree params;
  init_block(params, "t.layer0", cfg, Branch::understanding, rng);
  const Tensor x = testing::randn({5, cfg.model_dim}, rng);
  const auto mask = build_causal_mask(5);
  const Tensor y = block_forward(x, mask, load_block(params, "t.layer0", cfg), cfg);
  CHECK(y.shape() == x.shape());

  // zero output projections make the block an identity map
  for (const char* n : {"t.layer0.attn.out_weight", "t.layer0.attn.out_bias", "t.layer0.mlp.down_weight", "t.layer0.mlp.down_bias"})
    for (double& v : params.at(n).mutable_data()) v = 0.0;
  const Tensor id = block_forward(x, mask, load_block(params, "t.layer0", cfg), cfg);
  CHECK(testing::bitwise_equal(id, x));
}

TEST_CASE("full block passes grad_check") {
  const BlockConfig cfg = small_config();
  Rng rng(8);
  ParamTree params;
  init_block(params, "t.layer0", cfg, Branch::understanding, rng);
  const auto w = load_block(params, "t.layer0", cfg);
  const auto mask = build_causal_mask(4);
  const std::vector<double> pos = {0, 1, 2, 3};
  Tensor x = testing::randn({4, cfg.model_dim}, rng, true);
  CHECK(grad_check([&](const Tensor& t) { return testing::probe_sum(block_forward(t, mask, w, cfg, pos), 9); }, x) < 1e-4);
  for (const char* name : {"t.layer0.attn.q_weight", "t.layer0.attn.k_bias", "t.layer0.attn.q_norm", "t.layer0.mlp.up_weight",
                           "t.layer0.norm.attn"}) {
    CAPTURE(name);
    Tensor p = params.at(name);
    const Tensor x0 = testing::randn({4, cfg.model_dim}, rng);
    CHECK(grad_check(
              [&](const Tensor&) {
                return testing::probe_sum(block_forward(x0, mask, load_block(params, "t.layer0", cfg), cfg, pos), 10);
              },
              p, {1e-5, 24, 1}) < 1e-4);
  }
}

TEST_CASE("causal stack has no forward leakage") {
  const BlockConfig cfg = small_config();
  Rng rng(9);
  ParamTree params;
  init_block(params, "t.layer0", cfg, Branch::understanding, rng);
  init_block(params, "t.layer1", cfg, Branch::understanding, rng);
  const std::size_t L = 6;
  const auto mask = build_causal_mask(L);
  const auto pos = position_indices(L, 16);
  auto stack = [&](const Tensor& x) {
    Tensor h = block_forward(x, mask, load_block(params, "t.layer0", cfg), cfg, pos);
    return block_forward(h, mask, load_block(params, "t.layer1", cfg), cfg, pos);
  };
  for (std::size_t j = 1; j < L; ++j) {
    Tensor x = testing::randn({L, cfg.model_dim}, rng, true);
    const Tensor y = stack(x);
    // d out[i] / d in[j] for i < j, via a loss over rows before j
    backward(sum(slice_rows(y, 0, j)));
    for (std::size_t c = j * cfg.model_dim; c < L * cfg.model_dim; ++c) CHECK(x.grad()[c] == 0.0);
  }
}
