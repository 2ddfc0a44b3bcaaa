#include "duet/generation.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "duet/blocks.hpp"
#include "duet/cross_modal.hpp"
#include "duet/ops.hpp"

namespace duet {

namespace {

std::string layer(std::size_t i) { return "gen.layer" + std::to_string(i); }

void copy_into(Tensor& dst, const Tensor& src) {
  if (dst.shape() != src.shape()) throw std::logic_error("inherit_backbone: shape mismatch");
  const auto s = src.data();
  auto d = dst.mutable_data();
  std::copy(s.begin(), s.end(), d.begin());
}

}  // namespace

void init_generation(ParamTree& params, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto G = Branch::generation;
  const std::size_t d = cfg.backbone.model_dim, c = cfg.latent_channels, f = cfg.time_features, dp = cfg.probe_dim;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i) {
    init_block(params, layer(i), cfg.backbone, G, rng, "u");
    init_qkv(params, layer(i), cfg.backbone, G, rng, "g");
  }
  params.add("gen.final_norm.weight", Tensor::full({d}, 1.0, true), G);
  params.add("gen.latent_in.weight", random_normal({c, d}, 1.0 / std::sqrt(static_cast<double>(c)), rng), G);
  params.add("gen.latent_in.bias", Tensor::zeros({d}, true), G);
  params.add("gen.latent_out.weight", random_normal({d, c}, 0.1 * sd, rng), G);
  params.add("gen.latent_out.bias", Tensor::zeros({c}, true), G);
  params.add("gen.time.w1", random_normal({f, d}, 1.0 / std::sqrt(static_cast<double>(f)), rng), G);
  params.add("gen.time.b1", Tensor::zeros({d}, true), G);
  params.add("gen.time.w2", random_normal({d, d}, sd, rng), G);
  params.add("gen.time.b2", Tensor::zeros({d}, true), G);
  params.add("gen.repa.w1", random_normal({d, d}, sd, rng), G);
  params.add("gen.repa.b1", Tensor::zeros({d}, true), G);
  params.add("gen.repa.w2", random_normal({d, dp}, sd, rng), G);
  params.add("gen.repa.b2", Tensor::zeros({dp}, true), G);
}

void inherit_backbone(ParamTree& params, const ModelConfig& cfg) {
  for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i) {
    const std::string src = "und.layer" + std::to_string(i) + ".";
    const std::string dst = layer(i) + ".";
    for (const auto& name : params.names(Branch::understanding)) {
      if (name.rfind(src, 0) != 0) continue;
      const std::string leaf = name.substr(src.size());
      const Tensor& value = params.at(name);
      static const std::set<std::string> qkv = {"attn.q_weight", "attn.k_weight", "attn.v_weight",
                                                "attn.q_bias",   "attn.k_bias",   "attn.v_bias"};
      if (qkv.count(leaf)) {
        const std::string rest = leaf.substr(5);
        copy_into(params.at(dst + "attn.u." + rest), value);
        copy_into(params.at(dst + "attn.g." + rest), value);
      } else {
        copy_into(params.at(dst + leaf), value);
      }
    }
  }
  copy_into(params.at("gen.final_norm.weight"), params.at("und.final_norm.weight"));
}

FlowState flow_state_at(const Tensor& x0, const Tensor& x1, double t) {
  if (x0.shape() != x1.shape())
    throw std::invalid_argument("flow endpoints differ in shape: " + shape_str(x0.shape()) + " vs " + shape_str(x1.shape()));
  FlowState s;
  s.x0 = x0;
  s.x1 = x1;
  s.t = t;
  const auto a = x0.data(), b = x1.data();
  std::vector<double> xt(a.size()), ut(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    xt[i] = (1.0 - t) * a[i] + t * b[i];
    ut[i] = b[i] - a[i];
  }
  s.xt = Tensor(x0.shape(), std::move(xt));
  s.ut = Tensor(x0.shape(), std::move(ut));
  return s;
}

FlowState flow_sample_training_pair(const Tensor& x1, Rng& rng) {
  std::vector<double> noise(x1.numel());
  for (double& v : noise) v = rng.normal();
  const double t = rng.uniform();
  return flow_state_at(Tensor(x1.shape(), std::move(noise)), x1.detach(), t);
}

Tensor time_embedding(const ParamTree& params, const ModelConfig& cfg, double t) {
  const std::size_t half = cfg.time_features / 2;
  std::vector<double> feat(cfg.time_features);
  for (std::size_t j = 0; j < half; ++j) {
    const double w = std::exp(-std::log(10000.0) * static_cast<double>(j) / static_cast<double>(half));
    feat[j] = std::sin(1000.0 * t * w);
    feat[half + j] = std::cos(1000.0 * t * w);
  }
  const Tensor x({1, cfg.time_features}, std::move(feat));
  const Tensor h = silu(linear(x, params.at("gen.time.w1"), params.at("gen.time.b1")));
  return linear(h, params.at("gen.time.w2"), params.at("gen.time.b2"));
}

Tensor latent_grid_embedding(std::size_t side, std::size_t dim) {
  const std::size_t q = dim / 4;
  std::vector<double> out(side * side * dim, 0.0);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      const double y = (static_cast<double>(r) + 0.5) / static_cast<double>(side);
      const double x = (static_cast<double>(c) + 0.5) / static_cast<double>(side);
      double* row = out.data() + (r * side + c) * dim;
      for (std::size_t j = 0; j < q; ++j) {
        const double w = std::numbers::pi * static_cast<double>(j + 1);
        row[4 * j] = std::sin(w * y);
        row[4 * j + 1] = std::cos(w * y);
        row[4 * j + 2] = std::sin(w * x);
        row[4 * j + 3] = std::cos(w * x);
      }
    }
  return Tensor({side * side, dim}, std::move(out));
}

Tensor latent_project_in(const ParamTree& params, const Tensor& latent) {
  return linear(latent, params.at("gen.latent_in.weight"), params.at("gen.latent_in.bias"));
}

Tensor latent_project_out(const ParamTree& params, const Tensor& hidden) {
  return linear(hidden, params.at("gen.latent_out.weight"), params.at("gen.latent_out.bias"));
}

VelocityOutput velocity_field(const ParamTree& params, const ModelConfig& cfg, const Tensor& cond, const Tensor& xt,
                              double t) {
  const std::size_t d = cfg.backbone.model_dim;
  if (cond.rank() != 2 || cond.dim(1) != d)
    throw std::invalid_argument("conditioning rows must be [Lc, " + std::to_string(d) + "], got " + shape_str(cond.shape()));
  if (xt.rank() != 2 || xt.dim(1) != cfg.latent_channels)
    throw std::invalid_argument("latent tokens must be [hw, " + std::to_string(cfg.latent_channels) + "], got " +
                                shape_str(xt.shape()));
  const std::size_t hw = xt.dim(0);
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(hw))));
  if (side * side != hw) throw std::invalid_argument("latent token count " + std::to_string(hw) + " is not a square grid");

  Tensor noise_rows = add(add(latent_project_in(params, xt), latent_grid_embedding(side, d)), time_embedding(params, cfg, t));
  const std::size_t b = cond.dim(0);
  Tensor seq = concat_rows({cond, noise_rows});
  const std::size_t len = seq.dim(0);
  const AttentionMask mask = AttentionMask::full(len);
  const auto pos = position_indices(len, cfg.gen_base_len);
  VelocityOutput out;
  for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i) {
    seq = joint_block_forward(seq, b, mask, load_joint_block(params, layer(i), cfg.backbone), cfg.backbone, pos);
    if (i + 1 == cfg.repa_layer()) out.repa_hidden = slice_rows(seq, b, len);
  }
  const Tensor h = rms_norm(slice_rows(seq, b, len), params.at("gen.final_norm.weight"));
  out.velocity = latent_project_out(params, h);
  return out;
}

Tensor flow_loss(const Tensor& predicted, const Tensor& target) { return mse_loss(predicted, target); }

Tensor repa_project(const ParamTree& params, const Tensor& hidden) {
  const Tensor h = silu(linear(hidden, params.at("gen.repa.w1"), params.at("gen.repa.b1")));
  return linear(h, params.at("gen.repa.w2"), params.at("gen.repa.b2"));
}

Tensor row_cosine(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("row_cosine shape mismatch");
  const Tensor dot = sum_last(mul(a, b));
  const Tensor na = sqrt(add(sum_last(square(a)), 1e-24));
  const Tensor nb = sqrt(add(sum_last(square(b)), 1e-24));
  return div(dot, mul(na, nb));
}

Tensor repa_loss(const ParamTree& params, const Tensor& hidden, const Tensor& probe_features) {
  if (hidden.dim(0) != probe_features.dim(0))
    throw std::invalid_argument("alignment token counts differ: hidden " + shape_str(hidden.shape()) + ", probe " +
                                shape_str(probe_features.shape()));
  return neg(mean(row_cosine(repa_project(params, hidden), probe_features)));
}

Tensor sample_latent(const ParamTree& params, const ModelConfig& cfg, const Tensor& cond, const SampleOptions& options,
                     Rng& rng) {
  if (options.steps == 0) throw std::invalid_argument("sampler needs at least one step");
  NoGradGuard no_grad;
  const std::size_t hw = options.latent_side * options.latent_side, c = cfg.latent_channels;
  std::vector<double> x(hw * c);
  for (double& v : x) v = rng.normal();
  const double dt = 1.0 / static_cast<double>(options.steps);
  for (std::size_t s = 0; s < options.steps; ++s) {
    const double t = static_cast<double>(s) * dt;
    const Tensor vel = velocity_field(params, cfg, cond, Tensor({hw, c}, x), t).velocity;
    const auto v = vel.data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += dt * v[i];
      if (!std::isfinite(x[i])) throw std::runtime_error("sampler diverged at Euler step " + std::to_string(s));
    }
  }
  return Tensor({hw, c}, std::move(x));
}

}  // namespace duet
