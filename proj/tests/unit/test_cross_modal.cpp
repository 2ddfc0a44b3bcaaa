#include <doctest.h>

#include "duet/cross_modal.hpp"
#include "duet/ops.hpp"
#include "helpers.hpp"

using namespace duet;

namespace {

QkvWeights random_qkv(std::size_t d, Rng& rng) {
  QkvWeights w;
  w.q_weight = testing::randn({d, d}, rng);
  w.k_weight = testing::randn({d, d}, rng);
  w.v_weight = testing::randn({d, d}, rng);
  w.q_bias = testing::randn({d}, rng);
  w.k_bias = testing::randn({d}, rng);
  w.v_bias = testing::randn({d}, rng);
  return w;
}

AttentionWeights random_attn(std::size_t d, std::size_t hd, Rng& rng) {
  AttentionWeights a;
  a.out_weight = testing::randn({d, d}, rng, false, 0.3);
  a.out_bias = testing::randn({d}, rng);
  a.q_norm = Tensor::full({hd}, 1.0);
  a.k_norm = Tensor::full({hd}, 1.0);
  return a;
}

// Eq.-style row loop: each row i is multiplied by exactly the weight set
// its selector picks.
std::vector<double> row_loop(const Tensor& seq, std::size_t b, const Tensor& wu, const Tensor& bu, const Tensor& wg,
                             const Tensor& bg) {
  const std::size_t L = seq.dim(0), d = seq.dim(1), o = wu.dim(1);
  std::vector<double> out(L * o);
  for (std::size_t i = 0; i < L; ++i) {
    const auto [du, dg] = modality_select(i, b, L);
    for (std::size_t c = 0; c < o; ++c) {
      double u = bu.data()[c], g = bg.data()[c];
      for (std::size_t k = 0; k < d; ++k) {
        u += seq.data()[i * d + k] * wu.data()[k * o + c];
        g += seq.data()[i * d + k] * wg.data()[k * o + c];
      }
      out[i * o + c] = du * u + dg * g;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("modality selectors") {
  CHECK(modality_select(0, 3, 6) == std::pair{1, 0});
  CHECK(modality_select(2, 3, 6) == std::pair{1, 0});
  CHECK(modality_select(3, 3, 6) == std::pair{0, 1});
  for (std::size_t b = 0; b <= 6; ++b)
    for (std::size_t i = 0; i < 6; ++i) {
      const auto [u, g] = modality_select(i, b, 6);
      CHECK(u + g == 1);
    }
  CHECK_THROWS_AS(modality_select(6, 3, 6), std::out_of_range);
}

TEST_CASE("dual_qkv degenerate boundaries and row-loop oracle") {
  Rng rng(11);
  const std::size_t L = 7, d = 8;
  const Tensor seq = testing::randn({L, d}, rng);
  const DualQkv p{random_qkv(d, rng), random_qkv(d, rng)};

  const auto all_text = dual_qkv(seq, L, p);
  const auto only_u = project_qkv(seq, p.u);
  CHECK(testing::bitwise_equal(all_text.q, only_u.q));
  CHECK(testing::bitwise_equal(all_text.k, only_u.k));
  CHECK(testing::bitwise_equal(all_text.v, only_u.v));

  const auto all_noise = dual_qkv(seq, 0, p);
  const auto only_g = project_qkv(seq, p.g);
  CHECK(testing::bitwise_equal(all_noise.q, only_g.q));
  CHECK(testing::bitwise_equal(all_noise.v, only_g.v));

  for (std::size_t b : {1u, 3u, 6u}) {
    CAPTURE(b);
    const auto mixed = dual_qkv(seq, b, p);
    CHECK(testing::max_abs_diff(mixed.q, Tensor({L, d}, row_loop(seq, b, p.u.q_weight, p.u.q_bias, p.g.q_weight, p.g.q_bias))) < 1e-12);
    CHECK(testing::max_abs_diff(mixed.k, Tensor({L, d}, row_loop(seq, b, p.u.k_weight, p.u.k_bias, p.g.k_weight, p.g.k_bias))) < 1e-12);
    CHECK(testing::max_abs_diff(mixed.v, Tensor({L, d}, row_loop(seq, b, p.u.v_weight, p.u.v_bias, p.g.v_weight, p.g.v_bias))) < 1e-12);
  }
}

TEST_CASE("dual_qkv errors") {
  Rng rng(12);
  const Tensor seq = testing::randn({4, 8}, rng);
  DualQkv p{random_qkv(8, rng), random_qkv(8, rng)};
  CHECK_THROWS_AS(dual_qkv(seq, 5, p), std::out_of_range);
  p.g.k_weight = testing::randn({6, 8}, rng);
  CHECK_THROWS_AS(dual_qkv(seq, 2, p), std::invalid_argument);
}

TEST_CASE("selector collapse: identical weight sets give vanilla attention bitwise") {
  Rng rng(13);
  const std::size_t L = 9, d = 16, H = 2;
  const Tensor seq = testing::randn({L, d}, rng);
  const QkvWeights u = random_qkv(d, rng);
  const DualQkv same{u, u};
  const AttentionWeights a = random_attn(d, d / H, rng);
  const auto pos = position_indices(L, 8);
  const auto mask = AttentionMask::full(L);
  const auto ref = project_qkv(seq, u);
  const Tensor vanilla = attention(ref.q, ref.k, ref.v, mask, H, a, pos);
  for (std::size_t b = 0; b <= L; ++b) {
    CAPTURE(b);
    CHECK(testing::bitwise_equal(joint_attention(seq, b, same, mask, H, a, pos), vanilla));
  }
}

TEST_CASE("joint attention carries information both ways") {
  Rng rng(14);
  const std::size_t L = 8, b = 3, d = 16, H = 2;
  const Tensor seq = testing::randn({L, d}, rng);
  const DualQkv p{random_qkv(d, rng), random_qkv(d, rng)};
  const AttentionWeights a = random_attn(d, d / H, rng);
  const auto mask = AttentionMask::full(L);
  const Tensor base = joint_attention(seq, b, p, mask, H, a);

  auto perturbed = [&](std::size_t row, double delta) {
    std::vector<double> x(seq.data().begin(), seq.data().end());
    for (std::size_t c = 0; c < d; ++c) x[row * d + c] += delta;
    return joint_attention(Tensor({L, d}, x), b, p, mask, H, a);
  };
  auto max_change = [&](const Tensor& t, std::size_t r0, std::size_t r1) {
    double m = 0.0;
    for (std::size_t i = r0 * d; i < r1 * d; ++i) m = std::max(m, std::abs(t.data()[i] - base.data()[i]));
    return m;
  };
  // text row -> noise outputs, noise row -> text outputs
  CHECK(max_change(perturbed(0, 0.5), b, L) > 1e-6);
  CHECK(max_change(perturbed(L - 1, 0.5), 0, b) > 1e-6);

  // zeroing the text value projection changes the noise rows
  DualQkv zv = p;
  zv.u.v_weight = Tensor::zeros({d, d});
  zv.u.v_bias = Tensor::zeros({d});
  CHECK(max_change(joint_attention(seq, b, zv, mask, H, a), b, L) > 1e-6);

  // gradient form: d(noise outputs)/d(text inputs) and the reverse are nonzero
  Tensor x = Tensor(seq.shape(), testing::values(seq), true);
  backward(sum(slice_rows(joint_attention(x, b, p, mask, H, a), b, L)));
  double text_grad = 0.0;
  for (std::size_t i = 0; i < b * d; ++i) text_grad += std::abs(x.grad()[i]);
  CHECK(text_grad > 1e-8);
  Tensor y = Tensor(seq.shape(), testing::values(seq), true);
  backward(sum(slice_rows(joint_attention(y, b, p, mask, H, a), 0, b)));
  double noise_grad = 0.0;
  for (std::size_t i = b * d; i < L * d; ++i) noise_grad += std::abs(y.grad()[i]);
  CHECK(noise_grad > 1e-8);
}

TEST_CASE("joint block with identical groups matches a plain block") {
  Rng rng(15);
  BlockConfig cfg;
  cfg.model_dim = 16;
  cfg.num_heads = 2;
  cfg.head_dim = 8;
  cfg.mlp_hidden = 32;
  ParamTree params;
  init_block(params, "g.layer0", cfg, Branch::generation, rng, "u");
  init_qkv(params, "g.layer0", cfg, Branch::generation, rng, "g");
  for (const char* n : {"q_weight", "q_bias", "k_weight", "k_bias", "v_weight", "v_bias"}) {
    const auto src = params.at(std::string("g.layer0.attn.u.") + n).data();
    auto dst = params.at(std::string("g.layer0.attn.g.") + n).mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  const Tensor seq = testing::randn({6, 16}, rng);
  const auto mask = AttentionMask::full(6);
  const auto w = load_joint_block(params, "g.layer0", cfg);
  CHECK(testing::bitwise_equal(joint_block_forward(seq, 2, mask, w, cfg), block_forward(seq, mask, w.shared, cfg)));
}
