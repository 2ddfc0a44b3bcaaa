#include "duet/understanding.hpp"

#include <cmath>
#include <stdexcept>

#include "duet/blocks.hpp"
#include "duet/ops.hpp"
#include "duet/vocab.hpp"

namespace duet {

namespace {

std::string layer_prefix(const std::string& base, std::size_t i) { return base + ".layer" + std::to_string(i); }

}  // namespace

void init_understanding(ParamTree& params, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto B = Branch::understanding;
  const std::size_t d = cfg.backbone.model_dim, dv = cfg.vision_dim, pp = cfg.patch * cfg.patch;
  params.add("und.vision.patch_weight", random_normal({pp, dv}, 1.0 / std::sqrt(static_cast<double>(pp)), rng), B);
  params.add("und.vision.patch_bias", Tensor::zeros({dv}, true), B);
  params.add("und.vision.pos", random_normal({cfg.num_patches(), dv}, 0.1, rng), B);
  const BlockConfig vb = cfg.vision_block();
  for (std::size_t i = 0; i < cfg.vision_layers; ++i) init_block(params, layer_prefix("und.vision", i), vb, B, rng);
  params.add("und.vision.norm", Tensor::full({dv}, 1.0, true), B);

  params.add("und.connector.fc1_weight", random_normal({dv, d}, 1.0 / std::sqrt(static_cast<double>(dv)), rng), B);
  params.add("und.connector.fc1_bias", Tensor::zeros({d}, true), B);
  params.add("und.connector.fc2_weight", random_normal({d, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng), B);
  params.add("und.connector.fc2_bias", Tensor::zeros({d}, true), B);

  params.add("und.embed.weight", random_normal({cfg.vocab_size, d}, 1.0, rng), B);
  for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i) init_block(params, layer_prefix("und", i), cfg.backbone, B, rng);
  params.add("und.final_norm.weight", Tensor::full({d}, 1.0, true), B);
  params.add("und.lm_head.weight", random_normal({d, cfg.vocab_size}, 1.0 / std::sqrt(static_cast<double>(d)), rng), B);
}

Tensor encode_image(const ParamTree& params, const ModelConfig& cfg, const Tensor& image) {
  if (image.numel() != cfg.image_size * cfg.image_size)
    throw std::invalid_argument("encode_image expects a " + std::to_string(cfg.image_size) + "x" +
                                std::to_string(cfg.image_size) + " image, got " + shape_str(image.shape()));
  Tensor x = linear(patchify(image, cfg.image_size, cfg.patch), params.at("und.vision.patch_weight"),
                    params.at("und.vision.patch_bias"));
  x = add(x, params.at("und.vision.pos"));
  const BlockConfig vb = cfg.vision_block();
  const AttentionMask mask = AttentionMask::full(x.dim(0));
  for (std::size_t i = 0; i < cfg.vision_layers; ++i)
    x = block_forward(x, mask, load_block(params, layer_prefix("und.vision", i), vb), vb);
  return rms_norm(x, params.at("und.vision.norm"));
}

Tensor connect(const ParamTree& params, const ModelConfig& cfg, const Tensor& v) {
  if (v.rank() != 2 || v.dim(1) != cfg.vision_dim)
    throw std::invalid_argument("connector expects [P, " + std::to_string(cfg.vision_dim) + "], got " + shape_str(v.shape()));
  const Tensor h = silu(linear(v, params.at("und.connector.fc1_weight"), params.at("und.connector.fc1_bias")));
  return linear(h, params.at("und.connector.fc2_weight"), params.at("und.connector.fc2_bias"));
}

MultimodalSequence build_sequence(const ParamTree& params, const ModelConfig& cfg, const Tensor& image,
                                  const std::vector<std::size_t>& prompt, const std::vector<std::size_t>& report) {
  if (prompt.empty()) throw std::invalid_argument("prompt must contain at least one token");
  if (report.empty()) throw std::invalid_argument("empty report segment: nothing to predict");
  MultimodalSequence seq;
  const Tensor vis = connect(params, cfg, encode_image(params, cfg, image));
  std::vector<std::size_t> text(prompt);
  text.insert(text.end(), report.begin(), report.end());
  const Tensor txt = embedding(params.at("und.embed.weight"), text);
  seq.tokens = concat_rows({vis, txt});
  const std::size_t p = vis.dim(0);
  seq.ids.assign(p, MultimodalSequence::kNoToken);
  seq.ids.insert(seq.ids.end(), text.begin(), text.end());
  seq.segments.assign(p, Segment::vision);
  seq.segments.insert(seq.segments.end(), prompt.size(), Segment::prompt);
  seq.segments.insert(seq.segments.end(), report.size(), Segment::report);
  seq.n = seq.ids.size() - 1;
  seq.m = p + prompt.size() - 1;
  return seq;
}

Tensor lm_hidden(const ParamTree& params, const ModelConfig& cfg, const Tensor& rows) {
  const std::size_t len = rows.dim(0);
  const AttentionMask mask = build_causal_mask(len);
  const auto pos = position_indices(len, cfg.text_base_len);
  Tensor x = rows;
  for (std::size_t i = 0; i < cfg.backbone.num_layers; ++i)
    x = block_forward(x, mask, load_block(params, layer_prefix("und", i), cfg.backbone), cfg.backbone, pos);
  return rms_norm(x, params.at("und.final_norm.weight"));
}

Tensor ar_loss(const ParamTree& params, const ModelConfig& cfg, const MultimodalSequence& seq, bool sum) {
  if (seq.m >= seq.n) throw std::invalid_argument("ar_loss needs m < n (empty report segment)");
  if (seq.n >= seq.ids.size()) throw std::invalid_argument("ar_loss: n beyond the sequence");
  // Rows past n (padding) cannot influence positions <= n under the causal
  // mask, so only the prefix up to n is run.
  const Tensor rows = seq.tokens.dim(0) == seq.n + 1 ? seq.tokens : slice_rows(seq.tokens, 0, seq.n + 1);
  const Tensor h = lm_hidden(params, cfg, rows);
  const Tensor logits = matmul(slice_rows(h, seq.m, seq.n), params.at("und.lm_head.weight"));
  std::vector<std::size_t> targets(seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.m + 1),
                                   seq.ids.begin() + static_cast<std::ptrdiff_t>(seq.n + 1));
  for (std::size_t t : targets)
    if (t == MultimodalSequence::kNoToken) throw std::invalid_argument("ar_loss target falls on an image position");
  const Tensor loss = cross_entropy(logits, targets);
  return sum ? mul(loss, static_cast<double>(targets.size())) : loss;
}

Tensor text_hidden(const ParamTree& params, const ModelConfig& cfg, const std::vector<std::size_t>& ids) {
  if (ids.empty()) throw std::invalid_argument("text_hidden of an empty token list");
  return lm_hidden(params, cfg, embedding(params.at("und.embed.weight"), ids));
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

std::vector<std::size_t> generate_report(const ParamTree& params, const ModelConfig& cfg, const Tensor& image,
                                         const std::vector<std::size_t>& prompt, const DecodeOptions& options) {
  if (options.max_len == 0) throw std::invalid_argument("max_len must be at least 1");
  if (prompt.empty()) throw std::invalid_argument("prompt must contain at least one token");
  NoGradGuard no_grad;
  const Tensor vis = connect(params, cfg, encode_image(params, cfg, image));
  const Tensor& table = params.at("und.embed.weight");
  const Tensor& head = params.at("und.lm_head.weight");
  Rng rng(options.seed);
  std::vector<std::size_t> text(prompt), out;
  while (out.size() < options.max_len) {
    const Tensor h = lm_hidden(params, cfg, concat_rows({vis, embedding(table, text)}));
    const Tensor logits = matmul(slice_rows(h, h.dim(0) - 1, h.dim(0)), head);
    const auto l = logits.data();
    std::size_t next;
    if (options.mode == DecodeOptions::Mode::greedy) {
      next = argmax(l);
    } else {
      std::vector<double> p(l.size());
      const double mx = l[argmax(l)];
      double total = 0.0;
      for (std::size_t i = 0; i < l.size(); ++i) total += p[i] = std::exp((l[i] - mx) / options.temperature);
      double u = rng.uniform() * total;
      next = p.size() - 1;
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (u < p[i]) {
          next = i;
          break;
        }
        u -= p[i];
      }
    }
    if (next == Vocabulary::kEos) break;
    out.push_back(next);
    text.push_back(next);
  }
  return out;
}

}  // namespace duet
