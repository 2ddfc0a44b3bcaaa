#include "duet/probe.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "duet/blocks.hpp"
#include "duet/image_io.hpp"
#include "duet/ops.hpp"
#include "duet/optim.hpp"

namespace duet {

Probe::Probe(const ModelConfig& cfg, Rng& rng)
    : dim_(cfg.probe_dim), patch_(cfg.probe_patch), resolution_(cfg.probe_resolution) {
  const std::size_t pp = patch_ * patch_, d = dim_, g2 = grid() * grid();
  w_["patch.weight"] = random_normal({pp, d}, 1.0 / std::sqrt(static_cast<double>(pp)), rng);
  w_["patch.bias"] = Tensor::zeros({d}, true);
  w_["pos"] = random_normal({g2, d}, 0.1, rng);
  w_["conv.weight"] = random_normal({9 * d, d}, 1.0 / std::sqrt(9.0 * static_cast<double>(d)), rng);
  w_["conv.bias"] = Tensor::zeros({d}, true);
  w_["head.weight"] = random_normal({d, kNumFindings}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  w_["head.bias"] = Tensor::zeros({kNumFindings}, true);
  build_im2col();
}

Probe Probe::from_assets(const ModelConfig& cfg, std::map<std::string, Tensor> assets) {
  Probe p;
  p.dim_ = cfg.probe_dim;
  p.patch_ = cfg.probe_patch;
  p.resolution_ = cfg.probe_resolution;
  for (const char* name : {"patch.weight", "patch.bias", "pos", "conv.weight", "conv.bias", "head.weight", "head.bias"})
    if (!assets.count(name)) throw std::runtime_error(std::string("probe asset '") + name + "' missing from checkpoint");
  p.w_ = std::move(assets);
  p.build_im2col();
  return p;
}

void Probe::build_im2col() {
  const auto g = static_cast<std::ptrdiff_t>(grid());
  const auto d = static_cast<std::ptrdiff_t>(dim_);
  im2col_.clear();
  im2col_.reserve(static_cast<std::size_t>(g * g * 9 * d));
  for (std::ptrdiff_t r = 0; r < g; ++r)
    for (std::ptrdiff_t c = 0; c < g; ++c)
      for (std::ptrdiff_t dr = -1; dr <= 1; ++dr)
        for (std::ptrdiff_t dc = -1; dc <= 1; ++dc) {
          const std::ptrdiff_t rr = r + dr, cc = c + dc;
          const bool inside = rr >= 0 && rr < g && cc >= 0 && cc < g;
          for (std::ptrdiff_t ch = 0; ch < d; ++ch) im2col_.push_back(inside ? (rr * g + cc) * d + ch : -1);
        }
}

Tensor Probe::token_features(const Tensor& image) const {
  if (image.numel() != resolution_ * resolution_)
    throw std::invalid_argument("probe expects " + std::to_string(resolution_) + "x" + std::to_string(resolution_) +
                                " input, got " + shape_str(image.shape()));
  const std::size_t g2 = grid() * grid();
  Tensor x = add(linear(patchify(image, resolution_, patch_), w_.at("patch.weight"), w_.at("patch.bias")), w_.at("pos"));
  x = silu(x);
  const Tensor cols = gather(x, {g2, 9 * dim_}, im2col_);
  return silu(linear(cols, w_.at("conv.weight"), w_.at("conv.bias")));
}

Tensor Probe::logits(const Tensor& token_features) const {
  const Tensor pooled = reshape(mean_rows(token_features), {1, dim_});
  return linear(pooled, w_.at("head.weight"), w_.at("head.bias"));
}

std::vector<double> Probe::prepare(const std::vector<double>& image, std::size_t size) const {
  if (size == resolution_) return image;
  if (size % resolution_ != 0)
    throw std::invalid_argument("probe input size " + std::to_string(size) + " is not a multiple of " +
                                std::to_string(resolution_));
  return downsample(image, size, size / resolution_);
}

Tensor Probe::tokens(const std::vector<double>& image, std::size_t size) const {
  NoGradGuard no_grad;
  const auto px = prepare(image, size);
  return token_features(Tensor({px.size()}, px)).detach();
}

std::vector<double> Probe::features(const std::vector<double>& image, std::size_t size) const {
  NoGradGuard no_grad;
  const Tensor m = mean_rows(tokens(image, size));
  const auto pooled = m.data();
  return {pooled.begin(), pooled.end()};
}

Labels Probe::predict(const std::vector<double>& image, std::size_t size) const {
  NoGradGuard no_grad;
  const Tensor logit = logits(tokens(image, size));
  const auto l = logit.data();
  Labels out{};
  for (std::size_t k = 0; k < kNumFindings; ++k) out[k] = l[k] > 0.0 ? 1 : 0;  // sigmoid > 0.5
  return out;
}

std::string Probe::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : w_) {
    for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    for (double v : t.data()) {
      const auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) h = (h ^ ((bits >> (8 * i)) & 0xff)) * 0x100000001b3ULL;
    }
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

double probe_accuracy(const Probe& probe, const Corpus& corpus, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("probe_accuracy needs samples");
  std::size_t agree = 0;
  for (std::size_t i : indices) {
    const auto& s = corpus.samples.at(i);
    const Labels p = probe.predict(s.image, s.resolution);
    for (std::size_t k = 0; k < kNumFindings; ++k) agree += p[k] == s.labels[k];
  }
  return static_cast<double>(agree) / static_cast<double>(indices.size() * kNumFindings);
}

double train_probe(Probe& probe, const Corpus& corpus, const ProbeTraining& opts, Rng& rng) {
  const auto train = corpus.train_indices();
  if (train.empty()) throw std::invalid_argument("train_probe: corpus has no training samples");
  std::map<std::string, Tensor> trainable;
  for (auto& [name, t] : probe.trainable()) {
    t.set_requires_grad(true);
    trainable.emplace(name, t);
  }
  AdamW opt;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    for (auto& [name, t] : trainable) t.zero_grad();
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const auto& s = corpus.samples[train[rng.below(train.size())]];
      const auto px = probe.prepare(s.image, s.resolution);
      std::vector<double> y(s.labels.begin(), s.labels.end());
      const Tensor loss = bce_with_logits(probe.logits(probe.token_features(Tensor({px.size()}, px))),
                                          Tensor({1, kNumFindings}, std::move(y)));
      backward(mul(loss, 1.0 / static_cast<double>(opts.batch)));
    }
    opt.step(trainable, opts.learning_rate);
  }
  for (auto& [name, t] : trainable) t.set_requires_grad(false);
  return probe_accuracy(probe, corpus, corpus.test_indices());
}

}  // namespace duet
