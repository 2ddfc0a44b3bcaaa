#include "duet/blocks.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "duet/kernels.hpp"
#include "duet/ops.hpp"

namespace duet {

void BlockConfig::validate() const {
  if (num_heads == 0 || model_dim % num_heads != 0)
    throw std::invalid_argument("model_dim " + std::to_string(model_dim) + " not divisible by num_heads " +
                                std::to_string(num_heads));
  if (head_dim != model_dim / num_heads)
    throw std::invalid_argument("head_dim must equal model_dim / num_heads");
  if (head_dim % 2 != 0) throw std::invalid_argument("head_dim must be even for rotary positions");
}

AttentionMask::AttentionMask(std::size_t size, std::vector<std::uint8_t> allowed)
    : size_(size), allowed_(std::move(allowed)) {
  if (allowed_.size() != size_ * size_) throw std::invalid_argument("attention mask must be L x L");
}

AttentionMask AttentionMask::causal(std::size_t size) {
  std::vector<std::uint8_t> a(size * size, 0);
  for (std::size_t i = 0; i < size; ++i)
    for (std::size_t j = 0; j <= i; ++j) a[i * size + j] = 1;
  return AttentionMask(size, std::move(a));
}

AttentionMask AttentionMask::full(std::size_t size) {
  return AttentionMask(size, std::vector<std::uint8_t>(size * size, 1));
}

std::size_t AttentionMask::row_count(std::size_t i) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < size_; ++j) n += allowed_[i * size_ + j];
  return n;
}

AttentionMask build_causal_mask(std::size_t length) {
  if (length == 0) throw std::invalid_argument("causal mask needs length >= 1");
  return AttentionMask::causal(length);
}

std::vector<double> position_indices(std::size_t length, std::size_t base_len, double max_extension) {
  if (base_len == 0) throw std::invalid_argument("base_len must be positive");
  if (static_cast<double>(length) > static_cast<double>(base_len) * max_extension)
    throw std::out_of_range("sequence length " + std::to_string(length) + " exceeds extended position capacity " +
                            std::to_string(static_cast<std::size_t>(static_cast<double>(base_len) * max_extension)));
  const double scale = length > base_len ? static_cast<double>(base_len) / static_cast<double>(length) : 1.0;
  std::vector<double> pos(length);
  for (std::size_t i = 0; i < length; ++i) pos[i] = static_cast<double>(i) * scale;
  return pos;
}

namespace {

struct RopeTable {
  std::vector<double> cos, sin;  // [L, head_dim / 2]
};

RopeTable rope_table(std::span<const double> positions, std::size_t head_dim, double theta) {
  const std::size_t half = head_dim / 2;
  RopeTable t;
  t.cos.resize(positions.size() * half);
  t.sin.resize(positions.size() * half);
  for (std::size_t p = 0; p < half; ++p) {
    const double freq = std::pow(theta, -2.0 * static_cast<double>(p) / static_cast<double>(head_dim));
    for (std::size_t i = 0; i < positions.size(); ++i) {
      const double a = positions[i] * freq;
      t.cos[i * half + p] = std::cos(a);
      t.sin[i * half + p] = std::sin(a);
    }
  }
  return t;
}

}  // namespace

Tensor apply_rope(const Tensor& x, std::span<const double> positions, std::size_t num_heads, double theta) {
  if (x.rank() != 2) throw std::invalid_argument("apply_rope expects [L, d], got " + shape_str(x.shape()));
  const std::size_t len = x.dim(0), d = x.dim(1);
  if (positions.size() != len) throw std::invalid_argument("apply_rope: position count does not match sequence length");
  if (num_heads == 0 || d % num_heads != 0 || (d / num_heads) % 2 != 0)
    throw std::invalid_argument("apply_rope: head layout does not divide model width " + std::to_string(d));
  const std::size_t hd = d / num_heads, half = hd / 2;
  RopeTable table = rope_table(positions, hd, theta);
  const auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t h = 0; h < num_heads; ++h)
      for (std::size_t p = 0; p < half; ++p) {
        const std::size_t o = i * d + h * hd + 2 * p;
        const double c = table.cos[i * half + p], s = table.sin[i * half + p];
        out[o] = xd[o] * c - xd[o + 1] * s;
        out[o + 1] = xd[o] * s + xd[o + 1] * c;
      }
  return make_op(x.shape(), std::move(out), {x}, [table = std::move(table), len, d, hd, half, num_heads](detail::Node& n) {
    auto& gx = n.parents[0]->grad;
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t h = 0; h < num_heads; ++h)
        for (std::size_t p = 0; p < half; ++p) {
          const std::size_t o = i * d + h * hd + 2 * p;
          const double c = table.cos[i * half + p], s = table.sin[i * half + p];
          gx[o] += n.grad[o] * c + n.grad[o + 1] * s;
          gx[o + 1] += -n.grad[o] * s + n.grad[o + 1] * c;
        }
  });
}

Tensor apply_positions(const Tensor& x, std::size_t base_len, std::size_t num_heads) {
  const auto pos = position_indices(x.dim(0), base_len);
  return apply_rope(x, pos, num_heads);
}

Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                      std::size_t num_heads) {
  if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw std::invalid_argument("attention expects matching [L, d] Q, K, V; got " + shape_str(q.shape()) + ", " +
                                shape_str(k.shape()) + ", " + shape_str(v.shape()));
  const std::size_t len = q.dim(0), d = q.dim(1);
  if (mask.size() != len)
    throw std::invalid_argument("attention mask is " + std::to_string(mask.size()) + "x" + std::to_string(mask.size()) +
                                " for sequence length " + std::to_string(len));
  if (num_heads == 0 || d % num_heads != 0) throw std::invalid_argument("attention: heads do not divide model width");
  for (std::size_t i = 0; i < len; ++i)
    if (mask.row_count(i) == 0) throw std::invalid_argument("attention mask row " + std::to_string(i) + " has no attendable position");

  const std::size_t hd = d / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const auto& kern = kernels::active();
  const auto qd = q.data(), kd = k.data(), vd = v.data();

  std::vector<double> probs(num_heads * len * len);  // kept for backward
  std::vector<double> out(len * d, 0.0);
  std::vector<double> qh(len * hd), kt(hd * len), vh(len * hd), oh(len * hd);
  for (std::size_t h = 0; h < num_heads; ++h) {
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t c = 0; c < hd; ++c) {
        qh[i * hd + c] = qd[i * d + h * hd + c];
        kt[c * len + i] = kd[i * d + h * hd + c];
        vh[i * hd + c] = vd[i * d + h * hd + c];
      }
    double* p = probs.data() + h * len * len;
    kern.gemm(len, len, hd, qh.data(), hd, kt.data(), len, p, len, false);
    for (std::size_t i = 0; i < len; ++i) {
      double* row = p + i * len;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < len; ++j) {
        row[j] = mask.allowed(i, j) ? row[j] * scale : -std::numeric_limits<double>::infinity();
        mx = std::max(mx, row[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        row[j] = mask.allowed(i, j) ? std::exp(row[j] - mx) : 0.0;
        total += row[j];
      }
      for (std::size_t j = 0; j < len; ++j) row[j] /= total;
    }
    kern.gemm(len, hd, len, p, len, vh.data(), hd, oh.data(), hd, false);
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t c = 0; c < hd; ++c) out[i * d + h * hd + c] = oh[i * hd + c];
  }

  return make_op(q.shape(), std::move(out), {q, k, v}, [probs = std::move(probs), len, d, hd, num_heads, scale](detail::Node& n) {
    const auto& kern = kernels::active();
    const auto& qd = n.parents[0]->data;
    const auto& kd = n.parents[1]->data;
    const auto& vd = n.parents[2]->data;
    const bool gq = !n.parents[0]->grad.empty();
    const bool gk = !n.parents[1]->grad.empty();
    const bool gv = !n.parents[2]->grad.empty();
    std::vector<double> go(len * hd), vt(hd * len), dp(len * len), pt(len * len), tmp(len * hd), qh(len * hd), kh(len * hd),
        dst(len * len);
    for (std::size_t h = 0; h < num_heads; ++h) {
      const double* p = probs.data() + h * len * len;
      for (std::size_t i = 0; i < len; ++i)
        for (std::size_t c = 0; c < hd; ++c) {
          go[i * hd + c] = n.grad[i * d + h * hd + c];
          vt[c * len + i] = vd[i * d + h * hd + c];
          qh[i * hd + c] = qd[i * d + h * hd + c];
          kh[i * hd + c] = kd[i * d + h * hd + c];
        }
      if (gv) {
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < len; ++j) pt[j * len + i] = p[i * len + j];
        kern.gemm(len, hd, len, pt.data(), len, go.data(), hd, tmp.data(), hd, false);
        auto& g = n.parents[2]->grad;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t c = 0; c < hd; ++c) g[i * d + h * hd + c] += tmp[i * hd + c];
      }
      if (!gq && !gk) continue;
      // dS = P * (dP - rowsum(dP * P)), folded with the 1/sqrt(hd) scale.
      kern.gemm(len, len, hd, go.data(), hd, vt.data(), len, dp.data(), len, false);
      for (std::size_t i = 0; i < len; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < len; ++j) dot += dp[i * len + j] * p[i * len + j];
        for (std::size_t j = 0; j < len; ++j) dp[i * len + j] = p[i * len + j] * (dp[i * len + j] - dot) * scale;
      }
      if (gq) {
        kern.gemm(len, hd, len, dp.data(), len, kh.data(), hd, tmp.data(), hd, false);
        auto& g = n.parents[0]->grad;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t c = 0; c < hd; ++c) g[i * d + h * hd + c] += tmp[i * hd + c];
      }
      if (gk) {
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < len; ++j) dst[j * len + i] = dp[i * len + j];
        kern.gemm(len, hd, len, dst.data(), len, qh.data(), hd, tmp.data(), hd, false);
        auto& g = n.parents[1]->grad;
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t c = 0; c < hd; ++c) g[i * d + h * hd + c] += tmp[i * hd + c];
      }
    }
  });
}

namespace {

Tensor head_rms_norm(const Tensor& x, const Tensor& weight, std::size_t num_heads) {
  const std::size_t len = x.dim(0), d = x.dim(1);
  Tensor r = reshape(x, {len, num_heads, d / num_heads});
  return reshape(rms_norm(r, weight), {len, d});
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask, std::size_t num_heads,
                 const AttentionWeights& weights, std::span<const double> positions) {
  Tensor qq = q, kk = k;
  if (weights.q_norm.defined()) {
    qq = head_rms_norm(qq, weights.q_norm, num_heads);
    kk = head_rms_norm(kk, weights.k_norm, num_heads);
  }
  if (!positions.empty()) {
    qq = apply_rope(qq, positions, num_heads);
    kk = apply_rope(kk, positions, num_heads);
  }
  Tensor o = attention_core(qq, kk, v, mask, num_heads);
  return linear(o, weights.out_weight, weights.out_bias);
}

QkvProjection project_qkv(const Tensor& x, const QkvWeights& w) {
  return {linear(x, w.q_weight, w.q_bias), linear(x, w.k_weight, w.k_bias), linear(x, w.v_weight, w.v_bias)};
}

namespace {

Tensor opt(const ParamTree& params, const std::string& name) { return params.contains(name) ? params.at(name) : Tensor(); }

std::string qkv_name(const std::string& prefix, const std::string& group, const std::string& leaf) {
  return prefix + ".attn." + (group.empty() ? "" : group + ".") + leaf;
}

}  // namespace

QkvWeights load_qkv(const ParamTree& params, const std::string& prefix, const BlockConfig& cfg, const std::string& group) {
  QkvWeights w;
  w.q_weight = params.at(qkv_name(prefix, group, "q_weight"));
  w.k_weight = params.at(qkv_name(prefix, group, "k_weight"));
  w.v_weight = params.at(qkv_name(prefix, group, "v_weight"));
  if (cfg.qkv_bias) {
    w.q_bias = params.at(qkv_name(prefix, group, "q_bias"));
    w.k_bias = params.at(qkv_name(prefix, group, "k_bias"));
    w.v_bias = params.at(qkv_name(prefix, group, "v_bias"));
  }
  return w;
}

BlockWeights load_block(const ParamTree& params, const std::string& prefix, const BlockConfig& cfg, const std::string& group) {
  BlockWeights w;
  w.attn_norm = params.at(prefix + ".norm.attn");
  w.mlp_norm = params.at(prefix + ".norm.mlp");
  w.qkv = load_qkv(params, prefix, cfg, group);
  if (cfg.qk_norm) {
    w.attn.q_norm = params.at(prefix + ".attn.q_norm");
    w.attn.k_norm = params.at(prefix + ".attn.k_norm");
  }
  w.attn.out_weight = params.at(prefix + ".attn.out_weight");
  w.attn.out_bias = opt(params, prefix + ".attn.out_bias");
  w.mlp_up_weight = params.at(prefix + ".mlp.up_weight");
  w.mlp_up_bias = params.at(prefix + ".mlp.up_bias");
  w.mlp_down_weight = params.at(prefix + ".mlp.down_weight");
  w.mlp_down_bias = params.at(prefix + ".mlp.down_bias");
  return w;
}

Tensor random_normal(const Shape& shape, double stddev, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor(shape, std::move(v), requires_grad);
}

void init_qkv(ParamTree& params, const std::string& prefix, const BlockConfig& cfg, Branch branch, Rng& rng,
              const std::string& group) {
  const std::size_t d = cfg.model_dim;
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d));
  for (const char* which : {"q", "k", "v"}) {
    params.add(qkv_name(prefix, group, std::string(which) + "_weight"), random_normal({d, d}, std_in, rng), branch);
    if (cfg.qkv_bias) params.add(qkv_name(prefix, group, std::string(which) + "_bias"), Tensor::zeros({d}, true), branch);
  }
}

void init_block(ParamTree& params, const std::string& prefix, const BlockConfig& cfg, Branch branch, Rng& rng,
                const std::string& group) {
  cfg.validate();
  const std::size_t d = cfg.model_dim, hidden = cfg.mlp_hidden;
  const double std_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double std_out = std_in / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));
  params.add(prefix + ".norm.attn", Tensor::full({d}, 1.0, true), branch);
  params.add(prefix + ".norm.mlp", Tensor::full({d}, 1.0, true), branch);
  init_qkv(params, prefix, cfg, branch, rng, group);
  if (cfg.qk_norm) {
    params.add(prefix + ".attn.q_norm", Tensor::full({cfg.head_dim}, 1.0, true), branch);
    params.add(prefix + ".attn.k_norm", Tensor::full({cfg.head_dim}, 1.0, true), branch);
  }
  params.add(prefix + ".attn.out_weight", random_normal({d, d}, std_out, rng), branch);
  params.add(prefix + ".attn.out_bias", Tensor::zeros({d}, true), branch);
  params.add(prefix + ".mlp.up_weight", random_normal({d, hidden}, std_in, rng), branch);
  params.add(prefix + ".mlp.up_bias", Tensor::zeros({hidden}, true), branch);
  params.add(prefix + ".mlp.down_weight",
             random_normal({hidden, d}, std_out * std::sqrt(static_cast<double>(d) / static_cast<double>(hidden)), rng), branch);
  params.add(prefix + ".mlp.down_bias", Tensor::zeros({d}, true), branch);
}

Tensor residual_block(const Tensor& x, const AttentionMask& mask, const BlockWeights& w, const BlockConfig& cfg,
                      std::span<const double> positions, const QkvProjector& project) {
  const Tensor normed = rms_norm(x, w.attn_norm);
  const QkvProjection qkv = project(normed);
  const Tensor h = add(x, attention(qkv.q, qkv.k, qkv.v, mask, cfg.num_heads, w.attn, positions));
  const Tensor m = linear(silu(linear(rms_norm(h, w.mlp_norm), w.mlp_up_weight, w.mlp_up_bias)), w.mlp_down_weight,
                          w.mlp_down_bias);
  return add(h, m);
}

Tensor block_forward(const Tensor& x, const AttentionMask& mask, const BlockWeights& w, const BlockConfig& cfg,
                     std::span<const double> positions) {
  return residual_block(x, mask, w, cfg, positions, [&w](const Tensor& normed) { return project_qkv(normed, w.qkv); });
}

}  // namespace duet
