#include "duet/codec.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "duet/blocks.hpp"
#include "duet/ops.hpp"
#include "duet/optim.hpp"

namespace duet {

Codec::Codec(const ModelConfig& cfg, Rng& rng) : factor_(cfg.latent_factor), channels_(cfg.latent_channels) {
  const std::size_t pp = factor_ * factor_, h = cfg.codec_hidden, c = channels_;
  auto std_of = [](std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); };
  w_["enc.w1"] = random_normal({pp, h}, std_of(pp), rng);
  w_["enc.b1"] = Tensor::zeros({h}, true);
  w_["enc.w2"] = random_normal({h, c}, std_of(h), rng);
  w_["enc.b2"] = Tensor::zeros({c}, true);
  w_["dec.w1"] = random_normal({c, h}, std_of(c), rng);
  w_["dec.b1"] = Tensor::zeros({h}, true);
  w_["dec.w2"] = random_normal({h, pp}, std_of(h), rng);
  w_["dec.b2"] = Tensor::zeros({pp}, true);
  w_["norm.shift"] = Tensor::zeros({c});
  w_["norm.scale"] = Tensor::full({c}, 1.0);
}

Codec Codec::from_assets(const ModelConfig& cfg, std::map<std::string, Tensor> assets) {
  Codec codec;
  codec.factor_ = cfg.latent_factor;
  codec.channels_ = cfg.latent_channels;
  for (const char* name : {"enc.w1", "enc.b1", "enc.w2", "enc.b2", "dec.w1", "dec.b1", "dec.w2", "dec.b2", "norm.shift",
                           "norm.scale"})
    if (!assets.count(name)) throw std::runtime_error(std::string("codec asset '") + name + "' missing from checkpoint");
  codec.w_ = std::move(assets);
  return codec;
}

std::size_t Codec::latent_side(std::size_t image_size) const {
  if (image_size % factor_ != 0)
    throw std::invalid_argument("image size " + std::to_string(image_size) + " not divisible by codec factor " +
                                std::to_string(factor_));
  return image_size / factor_;
}

Tensor Codec::encode_raw(const Tensor& image, std::size_t size) const {
  latent_side(size);
  const Tensor h = silu(linear(patchify(image, size, factor_), w_.at("enc.w1"), w_.at("enc.b1")));
  return linear(h, w_.at("enc.w2"), w_.at("enc.b2"));
}

Tensor Codec::decode_raw(const Tensor& latent, std::size_t size) const {
  const std::size_t side = latent_side(size);
  if (latent.rank() != 2 || latent.dim(0) != side * side || latent.dim(1) != channels_)
    throw std::invalid_argument("latent " + shape_str(latent.shape()) + " does not match a " + std::to_string(size) +
                                "-pixel image");
  const Tensor h = silu(linear(latent, w_.at("dec.w1"), w_.at("dec.b1")));
  return unpatchify(linear(h, w_.at("dec.w2"), w_.at("dec.b2")), size, factor_);
}

Tensor Codec::encode(const std::vector<double>& image, std::size_t size) const {
  NoGradGuard no_grad;
  const Tensor z = encode_raw(Tensor({image.size()}, image), size);
  return div(sub(z, w_.at("norm.shift")), w_.at("norm.scale")).detach();
}

std::vector<double> Codec::decode(const Tensor& latent, std::size_t size) const {
  NoGradGuard no_grad;
  const Tensor z = add(mul(latent, w_.at("norm.scale")), w_.at("norm.shift"));
  const Tensor decoded = decode_raw(z, size);
  const auto px = decoded.data();
  std::vector<double> out(px.begin(), px.end());
  for (double& p : out) p = std::clamp(p, 0.0, 1.0);
  return out;
}

void Codec::fit_normalization(const std::vector<std::vector<double>>& images, std::size_t size) {
  if (images.empty()) throw std::invalid_argument("fit_normalization needs images");
  NoGradGuard no_grad;
  std::vector<double> sum(channels_, 0.0), sq(channels_, 0.0);
  std::size_t count = 0;
  for (const auto& img : images) {
    const Tensor encoded = encode_raw(Tensor({img.size()}, img), size);
    const auto z = encoded.data();
    for (std::size_t i = 0; i < z.size(); ++i) {
      sum[i % channels_] += z[i];
      sq[i % channels_] += z[i] * z[i];
    }
    count += z.size() / channels_;
  }
  std::vector<double> shift(channels_), scale(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    shift[c] = sum[c] / static_cast<double>(count);
    const double var = sq[c] / static_cast<double>(count) - shift[c] * shift[c];
    scale[c] = std::sqrt(std::max(var, 1e-12));
  }
  w_["norm.shift"] = Tensor({channels_}, shift);
  w_["norm.scale"] = Tensor({channels_}, scale);
}

double Codec::reconstruction_mse(const std::vector<std::vector<double>>& images, std::size_t size) const {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& img : images) {
    const auto rec = decode(encode(img, size), size);
    for (std::size_t i = 0; i < img.size(); ++i) total += (rec[i] - img[i]) * (rec[i] - img[i]);
    count += img.size();
  }
  return total / static_cast<double>(count);
}

double train_codec(Codec& codec, const std::vector<std::vector<double>>& images, std::size_t size,
                   const CodecTraining& opts, Rng& rng) {
  if (images.empty()) throw std::invalid_argument("train_codec needs images");
  std::map<std::string, Tensor> trainable;
  for (auto& [name, t] : codec.trainable())
    if (name.rfind("norm.", 0) != 0) {
      t.set_requires_grad(true);
      trainable.emplace(name, t);
    }
  AdamW opt(AdamWConfig{0.9, 0.95, 1e-15, 0.0, 1.0});
  double last = 0.0;
  for (std::size_t step = 0; step < opts.steps; ++step) {
    for (auto& [name, t] : trainable) t.zero_grad();
    std::vector<Tensor> batch;
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const auto& img = images[rng.below(images.size())];
      batch.emplace_back(Shape{img.size()}, img);
    }
    last = 0.0;
    for (const auto& x : batch) {
      const Tensor loss = mse_loss(codec.decode_raw(codec.encode_raw(x, size), size), x);
      backward(mul(loss, 1.0 / static_cast<double>(batch.size())));
      last += loss.item() / static_cast<double>(batch.size());
    }
    opt.step(trainable, opts.learning_rate);
  }
  for (auto& [name, t] : trainable) t.set_requires_grad(false);
  codec.fit_normalization(images, size);
  return last;
}

}  // namespace duet
