#include "duet/model.hpp"

#include <stdexcept>

#include "duet/generation.hpp"
#include "duet/understanding.hpp"
#include "duet/vocab.hpp"

namespace duet {

Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  if (config.vocab_size != vocabulary().size())
    throw std::invalid_argument("vocab_size " + std::to_string(config.vocab_size) + " does not match the report vocabulary (" +
                                std::to_string(vocabulary().size()) + ")");
  Model m;
  m.config = config;
  Rng root(seed);
  Rng und = root.fork(1), gen = root.fork(2);
  init_understanding(m.params, config, und);
  init_generation(m.params, config, gen);
  return m;
}

Checkpoint model_checkpoint(const Model& model, const AdamW* optimizer,
                            const std::map<std::string, std::string>& extra_meta) {
  Checkpoint ckpt;
  ckpt.metadata = model.config.to_metadata();
  for (const auto& [k, v] : model.meta) ckpt.metadata["model." + k] = v;
  for (const auto& [k, v] : extra_meta) ckpt.metadata[k] = v;
  store_params(ckpt, model.params);
  if (optimizer) store_optimizer(ckpt, *optimizer);
  if (model.has_codec) store_assets(ckpt, "codec", model.codec.assets());
  if (model.has_probe) store_assets(ckpt, "probe", model.probe.assets());
  return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model m;
  m.config = ModelConfig::from_metadata(ckpt.metadata);
  m.params = load_params(ckpt);
  for (const auto& [k, v] : ckpt.metadata)
    if (k.rfind("model.", 0) == 0) m.meta[k.substr(6)] = v;
  auto codec = load_assets(ckpt, "codec");
  if (!codec.empty()) {
    m.codec = Codec::from_assets(m.config, std::move(codec));
    m.has_codec = true;
  }
  auto probe = load_assets(ckpt, "probe");
  if (!probe.empty()) {
    m.probe = Probe::from_assets(m.config, std::move(probe));
    m.has_probe = true;
  }
  return m;
}

void save_model(const std::filesystem::path& path, const Model& model, const AdamW* optimizer,
                const std::map<std::string, std::string>& extra_meta) {
  write_checkpoint(path, model_checkpoint(model, optimizer, extra_meta));
}

Model load_model(const std::filesystem::path& path) { return model_from_checkpoint(read_checkpoint(path)); }

Tensor condition_rows(const Model& model, const std::string& report) {
  NoGradGuard no_grad;
  return text_hidden(model.params, model.config, vocabulary().condition_tokens(report)).detach();
}

std::string describe_image(const Model& model, const std::vector<double>& image, const std::string& prompt,
                           std::size_t max_len) {
  const auto& vocab = vocabulary();
  std::vector<std::size_t> ids = vocab.report_prompt();
  if (!prompt.empty()) {
    ids = {Vocabulary::kBos};
    for (std::size_t id : vocab.encode(prompt)) ids.push_back(id);
    ids.push_back(Vocabulary::kReport);
  }
  DecodeOptions opts;
  opts.max_len = max_len;
  return vocab.decode(generate_report(model.params, model.config, Tensor({image.size()}, image), ids, opts));
}

std::vector<double> generate_image(const Model& model, const Tensor& cond, const GenerateOptions& options) {
  if (!model.has_codec) throw std::runtime_error("model has no trained codec; run prepare first");
  Rng rng(options.seed);
  SampleOptions s;
  s.steps = options.steps;
  s.latent_side = model.codec.latent_side(options.resolution);
  const Tensor latent = sample_latent(model.params, model.config, cond, s, rng);
  return model.codec.decode(latent, options.resolution);
}

std::vector<double> generate_image(const Model& model, const std::string& report, const GenerateOptions& options) {
  return generate_image(model, condition_rows(model, report), options);
}

}  // namespace duet
