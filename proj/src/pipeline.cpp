#include "duet/pipeline.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <tuple>

#include "duet/generation.hpp"
#include "duet/ops.hpp"
#include "duet/understanding.hpp"
#include "duet/vocab.hpp"

#ifndef DUET_GIT_DESCRIBE
#define DUET_GIT_DESCRIBE "unknown"
#endif

namespace duet {

namespace {

constexpr std::array<std::size_t, 3> kReferenceSteps = {3840, 75000, 5000};
constexpr std::array<std::size_t, 3> kReferenceResolution = {384, 256, 512};
constexpr std::size_t kReferenceBatch = 256;

std::string freeze_str(const std::set<Branch>& s) {
  if (s.empty()) return "none";
  std::string out;
  for (Branch b : s) {
    if (!out.empty()) out += ",";
    out += to_string(b);
  }
  return out;
}

std::set<Branch> parse_freeze(const std::string& text) {
  std::set<Branch> out;
  if (text == "none" || text.empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(parse_branch(item));
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  unsigned long long x = 0;
  try {
    x = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') throw std::invalid_argument(key + ": expected a non-negative integer, got '" + v + "'");
  return static_cast<std::size_t>(x);
}

double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(x)) throw std::invalid_argument(key + ": expected a number, got '" + v + "'");
  return x;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(key + ": expected true or false, got '" + v + "'");
}

std::pair<std::size_t, std::size_t> parse_ratio(const std::string& key, const std::string& v) {
  const auto colon = v.find(':');
  if (colon == std::string::npos) throw std::invalid_argument(key + ": expected r:s, got '" + v + "'");
  const std::pair r{to_size(key, v.substr(0, colon)), to_size(key, v.substr(colon + 1))};
  if (r.first == 0 && r.second == 0) throw std::invalid_argument(key + ": ratio 0:0 selects no samples");
  return r;
}

std::vector<double> image_at(const SyntheticSample& s, std::size_t resolution) {
  return resolution == s.resolution ? s.image : render(s.spec, resolution);
}

std::vector<std::size_t> report_targets(const SyntheticSample& s) {
  auto ids = vocabulary().encode(clean_report(s.noisy_report));
  ids.push_back(Vocabulary::kEos);
  return ids;
}

double mean_tail(const std::vector<double>& v, std::size_t n) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  n = std::min(n, v.size());
  double s = 0.0;
  for (std::size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
  return s / static_cast<double>(n);
}

std::string codec_hash(const Model& model) {
  if (!model.has_codec) return "none";
  Checkpoint c;
  store_assets(c, "codec", model.codec.assets());
  const auto bytes = encode_checkpoint(c);
  return fnv_hex(std::string(bytes.begin(), bytes.end()));
}

}  // namespace

StageConfig default_stage_config(int stage) {
  StageConfig c;
  c.stage = stage;
  switch (stage) {
    case 1:
      c.learning_rate = 1e-4;
      c.warmup_steps = 30;
      c.total_steps = 1500;
      c.image_resolution = 32;
      c.freeze = {Branch::generation};
      c.mix_understanding = 1;
      c.mix_generation = 0;
      break;
    case 2:
      c.learning_rate = 2e-4;
      c.warmup_steps = 40;
      c.total_steps = 1500;
      c.image_resolution = 32;
      c.use_repa = true;
      c.freeze = {Branch::understanding};
      c.mix_understanding = 0;
      c.mix_generation = 1;
      break;
    case 3:
      c.learning_rate = 1e-4;
      c.warmup_steps = 0;
      c.total_steps = 100;
      c.image_resolution = 64;
      c.freeze = {Branch::understanding};
      c.mix_understanding = 0;
      c.mix_generation = 1;
      break;
    default:
      throw std::invalid_argument("stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
  return c;
}

StageConfig stage_config_from_kv(const std::map<std::string, std::string>& kv, const std::string& prefix) {
  auto get = [&](const std::string& k) -> const std::string* {
    const auto it = kv.find(prefix + k);
    return it == kv.end() ? nullptr : &it->second;
  };
  int stage = 1;
  if (const auto* v = get("stage")) stage = static_cast<int>(to_size(prefix + "stage", *v));
  StageConfig c = default_stage_config(stage);
  if (const auto* v = get("learning_rate")) c.learning_rate = to_double(prefix + "learning_rate", *v);
  if (const auto* v = get("warmup_steps")) c.warmup_steps = to_size(prefix + "warmup_steps", *v);
  if (const auto* v = get("total_steps")) c.total_steps = to_size(prefix + "total_steps", *v);
  if (const auto* v = get("image_resolution")) c.image_resolution = to_size(prefix + "image_resolution", *v);
  if (const auto* v = get("use_repa")) c.use_repa = to_bool(prefix + "use_repa", *v);
  if (const auto* v = get("repa_weight")) c.repa_weight = to_double(prefix + "repa_weight", *v);
  if (const auto* v = get("batch_size")) c.batch_size = to_size(prefix + "batch_size", *v);
  if (const auto* v = get("freeze")) c.freeze = parse_freeze(*v);
  if (const auto* v = get("mixing_ratio")) std::tie(c.mix_understanding, c.mix_generation) = parse_ratio(prefix + "mixing_ratio", *v);
  if (const auto* v = get("sum_loss")) c.sum_loss = to_bool(prefix + "sum_loss", *v);
  if (c.total_steps == 0) throw std::invalid_argument(prefix + "total_steps must be at least 1");
  if (c.batch_size == 0) throw std::invalid_argument(prefix + "batch_size must be at least 1");
  if (c.learning_rate <= 0.0) throw std::invalid_argument(prefix + "learning_rate must be positive");
  return c;
}

KeyValues stage_config_to_kv(const StageConfig& c, const std::string& prefix) {
  return {
      {prefix + "stage", std::to_string(c.stage)},
      {prefix + "learning_rate", format_double(c.learning_rate)},
      {prefix + "warmup_steps", std::to_string(c.warmup_steps)},
      {prefix + "total_steps", std::to_string(c.total_steps)},
      {prefix + "image_resolution", std::to_string(c.image_resolution)},
      {prefix + "use_repa", c.use_repa ? "true" : "false"},
      {prefix + "repa_weight", format_double(c.repa_weight)},
      {prefix + "batch_size", std::to_string(c.batch_size)},
      {prefix + "freeze", freeze_str(c.freeze)},
      {prefix + "mixing_ratio", std::to_string(c.mix_understanding) + ":" + std::to_string(c.mix_generation)},
      {prefix + "sum_loss", c.sum_loss ? "true" : "false"},
  };
}

void check_stage_invariants(const StageConfig& c) {
  const std::string s = "stage " + std::to_string(c.stage) + ": ";
  if (c.stage == 1) {
    if (c.freeze != std::set<Branch>{Branch::generation}) throw std::invalid_argument(s + "must freeze exactly the generation branch");
    if (c.use_repa) throw std::invalid_argument(s + "alignment loss applies to generation stages only");
    if (c.mix_understanding == 0 || c.mix_generation != 0) throw std::invalid_argument(s + "trains on understanding samples only (mixing_ratio r:0)");
  } else if (c.stage == 2 || c.stage == 3) {
    if (c.freeze != std::set<Branch>{Branch::understanding})
      throw std::invalid_argument(s + "must freeze exactly the understanding branch");
    if (c.mix_understanding != 0 || c.mix_generation == 0)
      throw std::invalid_argument(s + "trains on generation samples only (mixing_ratio 0:s)");
    if (c.stage == 3 && c.use_repa) throw std::invalid_argument(s + "uses the flow loss only (use_repa=false)");
  } else {
    throw std::invalid_argument("stage must be 1, 2 or 3, got " + std::to_string(c.stage));
  }
}

BatchPlan batch_plan(const StageConfig& c) {
  if (c.mix_understanding == 0 && c.mix_generation == 0) throw std::invalid_argument("mixing ratio 0:0 selects no samples");
  if (c.batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
  BatchPlan p;
  if (c.mix_generation == 0) {
    p.understanding = c.batch_size;
    return p;
  }
  p.generation = c.batch_size;
  const std::size_t num = c.batch_size * c.mix_understanding;
  if (num % c.mix_generation != 0)
    throw std::invalid_argument("batch_size " + std::to_string(c.batch_size) + " does not split exactly by mixing ratio " +
                                std::to_string(c.mix_understanding) + ":" + std::to_string(c.mix_generation));
  p.understanding = num / c.mix_generation;
  return p;
}

double learning_rate_at(const StageConfig& c, std::size_t step) {
  if (c.warmup_steps == 0 || step >= c.warmup_steps) return c.learning_rate;
  return c.learning_rate * (static_cast<double>(step) / static_cast<double>(c.warmup_steps));
}

std::set<std::string> freeze_mask(const ParamTree& params, const std::set<Branch>& frozen) {
  std::set<std::string> out;
  for (const auto& [name, e] : params.entries())
    if (!frozen.count(e.branch)) out.insert(name);
  if (out.empty()) throw std::invalid_argument("freeze set " + freeze_str(frozen) + " leaves no trainable parameters");
  return out;
}

std::string git_describe() { return DUET_GIT_DESCRIBE; }

std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p.replace_extension(".manifest");
  return p;
}

std::map<std::string, std::string> verify_previous_stage(const std::filesystem::path& checkpoint, int expected_stage) {
  const auto mpath = manifest_path_for(checkpoint);
  const std::string want = expected_stage == 0 ? "the prepare manifest" : "a stage-" + std::to_string(expected_stage) + " manifest";
  if (!std::filesystem::exists(checkpoint)) throw std::runtime_error("checkpoint not found: " + checkpoint.string());
  if (!std::filesystem::exists(mpath))
    throw std::runtime_error("stage " + std::to_string(expected_stage + 1) + " requires " + want + " at " + mpath.string());
  auto kv = read_kv(mpath);
  const auto it = kv.find("stage");
  if (it == kv.end() || it->second != std::to_string(expected_stage))
    throw std::runtime_error(mpath.string() + " is not " + want + " (stage=" + (it == kv.end() ? "?" : it->second) + ")");
  const auto h = kv.find("checkpoint_hash");
  if (h == kv.end() || h->second != file_hash(checkpoint))
    throw std::runtime_error("checkpoint " + checkpoint.string() + " does not match the hash recorded in " + mpath.string());
  return kv;
}

double repa_cosine(const Model& model, const Corpus& corpus, std::size_t samples, std::uint64_t seed) {
  if (!model.has_codec || !model.has_probe) throw std::runtime_error("alignment monitor needs the trained codec and probe");
  NoGradGuard no_grad;
  const auto train = corpus.train_indices();
  const std::size_t n = std::min(samples, train.size());
  if (n == 0) throw std::invalid_argument("alignment monitor needs training samples");
  const std::size_t res = model.config.probe_resolution;
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& s = corpus.samples[train[j]];
    const auto img = image_at(s, res);
    Rng rng(mix_seed(seed, train[j]));
    const FlowState fs = flow_sample_training_pair(model.codec.encode(img, res), rng);
    const auto out = velocity_field(model.params, model.config, condition_rows(model, s.clean_report), fs.xt, fs.t);
    total += mean(row_cosine(repa_project(model.params, out.repa_hidden), model.probe.tokens(img, res))).item();
  }
  return total / static_cast<double>(n);
}

StageResult run_stage(const StageConfig& cfg, Model& model, const Corpus& corpus, const StageOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  const BatchPlan plan = batch_plan(cfg);
  if (cfg.total_steps == 0) throw std::invalid_argument("total_steps must be at least 1");
  if (plan.generation > 0 && !model.has_codec) throw std::runtime_error("generation training needs the trained codec; run prepare first");
  if (cfg.use_repa) {
    if (!model.has_probe) throw std::runtime_error("alignment loss needs the trained probe; run prepare first");
    const std::size_t side = model.codec.latent_side(cfg.image_resolution);
    if (side * side != model.probe.grid() * model.probe.grid())
      throw std::invalid_argument("alignment loss needs as many latent tokens as probe tokens; resolution " +
                                  std::to_string(cfg.image_resolution) + " gives " + std::to_string(side * side));
  }
  const std::string name = options.name.empty() ? "stage" + std::to_string(cfg.stage) : options.name;
  std::filesystem::create_directories(options.out_dir);
  const auto train = corpus.train_indices();
  if (train.empty()) throw std::invalid_argument("corpus has no training samples");

  if (cfg.stage >= 2 && model.meta["generation.inherited"] != "1") {
    inherit_backbone(model.params, model.config);
    model.meta["generation.inherited"] = "1";
  }

  if (plan.generation > 0) model.meta["last_resolution"] = std::to_string(cfg.image_resolution);
  const auto trainable = freeze_mask(model.params, cfg.freeze);
  bool und_trainable = false;
  for (const auto& n : trainable) und_trainable |= model.params.branch(n) == Branch::understanding;

  StageResult result;
  const std::size_t monitor = options.repa_monitor_samples;
  const std::uint64_t monitor_seed = mix_seed(options.seed, 0x5eed);
  if (cfg.use_repa && monitor > 0) result.repa_cosine_start = repa_cosine(model, corpus, monitor, monitor_seed);

  model.params.set_trainable(trainable);
  const ModelConfig& mc = model.config;
  const auto& vocab = vocabulary();
  const auto prompt = vocab.report_prompt();

  std::map<std::size_t, Tensor> cond_cache, latent_cache, probe_cache;
  auto latent_of = [&](std::size_t idx) -> const Tensor& {
    auto it = latent_cache.find(idx);
    if (it == latent_cache.end())
      it = latent_cache.emplace(idx, model.codec.encode(image_at(corpus.samples[idx], cfg.image_resolution), cfg.image_resolution)).first;
    return it->second;
  };
  auto probe_of = [&](std::size_t idx) -> const Tensor& {
    auto it = probe_cache.find(idx);
    if (it == probe_cache.end()) {
      const std::size_t r = cfg.image_resolution;
      it = probe_cache.emplace(idx, model.probe.tokens(image_at(corpus.samples[idx], r), r)).first;
    }
    return it->second;
  };
  auto cond_of = [&](std::size_t idx) -> Tensor {
    const auto ids = vocab.condition_tokens(clean_report(corpus.samples[idx].noisy_report));
    if (und_trainable) return text_hidden(model.params, mc, ids);
    auto it = cond_cache.find(idx);
    if (it == cond_cache.end()) {
      NoGradGuard ng;
      it = cond_cache.emplace(idx, text_hidden(model.params, mc, ids).detach()).first;
    }
    return it->second;
  };

  AdamW opt(AdamWConfig{0.9, 0.95, 1e-15, 0.0, 1.0});
  const auto stride = static_cast<std::size_t>(
      std::max(1.0, std::round(static_cast<double>(cfg.total_steps) * options.checkpoint_fraction)));
  const auto partial = options.out_dir / (name + ".partial.ckpt");
  const double w = 1.0 / static_cast<double>(plan.understanding + plan.generation);
  const Rng root(mix_seed(options.seed, static_cast<std::uint64_t>(cfg.stage)));
  std::ostringstream loss_log;
  loss_log << "# step loss understanding_loss generation_loss learning_rate\n";

  for (std::size_t step = 1; step <= cfg.total_steps; ++step) {
    Rng rng = root.fork(step);
    model.params.zero_grad();
    double und_loss = 0.0, gen_loss = 0.0;
    for (std::size_t j = 0; j < plan.understanding; ++j) {
      const auto& s = corpus.samples[train[rng.below(train.size())]];
      const auto seq = build_sequence(model.params, mc, Tensor({s.image.size()}, image_at(s, mc.image_size)), prompt,
                                      report_targets(s));
      const Tensor loss = ar_loss(model.params, mc, seq, cfg.sum_loss);
      backward(mul(loss, w));
      und_loss += loss.item();
    }
    for (std::size_t j = 0; j < plan.generation; ++j) {
      const std::size_t idx = train[rng.below(train.size())];
      const FlowState fs = flow_sample_training_pair(latent_of(idx), rng);
      const auto out = velocity_field(model.params, mc, cond_of(idx), fs.xt, fs.t);
      Tensor loss = flow_loss(out.velocity, fs.ut);
      if (cfg.use_repa) loss = add(loss, mul(repa_loss(model.params, out.repa_hidden, probe_of(idx)), cfg.repa_weight));
      backward(mul(loss, w));
      gen_loss += loss.item();
    }
    const double total = w * (und_loss + gen_loss);
    if (!std::isfinite(total)) {
      model.params.set_trainable({});
      throw std::runtime_error("non-finite loss at step " + std::to_string(step) + " of " + name +
                               (std::filesystem::exists(partial) ? "; last good checkpoint: " + partial.string() : ""));
    }
    const double lr = learning_rate_at(cfg, step);
    opt.step(model.params, trainable, lr);
    result.losses.push_back(total);
    result.understanding_samples += plan.understanding;
    result.generation_samples += plan.generation;
    loss_log << step << ' ' << format_double(total) << ' '
             << format_double(plan.understanding ? und_loss / static_cast<double>(plan.understanding) : 0.0) << ' '
             << format_double(plan.generation ? gen_loss / static_cast<double>(plan.generation) : 0.0) << ' '
             << format_double(lr) << '\n';
    if (options.log && (step == 1 || step % std::max<std::size_t>(1, options.log_every) == 0 || step == cfg.total_steps))
      *options.log << name << " step " << step << "/" << cfg.total_steps << " loss " << total << " lr " << lr << std::endl;
    if (step % stride == 0 && step != cfg.total_steps) {
      save_model(partial, model, &opt, {{"stage.step", std::to_string(step)}, {"stage.name", name}});
    }
  }
  model.params.set_trainable({});

  if (cfg.use_repa && monitor > 0) result.repa_cosine_end = repa_cosine(model, corpus, monitor, monitor_seed);

  result.checkpoint = options.out_dir / (name + ".ckpt");
  save_model(result.checkpoint, model, &opt, {{"stage.step", std::to_string(cfg.total_steps)}, {"stage.name", name}});
  if (std::filesystem::exists(partial)) std::filesystem::remove(partial);
  write_text(options.out_dir / (name + ".loss.txt"), loss_log.str());

  const std::size_t k = static_cast<std::size_t>(cfg.stage) - 1;
  KeyValues& m = result.manifest;
  m = {{"format", "duet-manifest-1"},
       {"stage", std::to_string(cfg.stage)},
       {"name", name},
       {"seed", std::to_string(options.seed)},
       {"git_describe", git_describe()},
       {"dataset_hash", dataset_hash(corpus)},
       {"codec_hash", codec_hash(model)},
       {"probe_hash", model.has_probe ? model.probe.hash() : "none"}};
  for (auto& e : stage_config_to_kv(cfg, "config.")) m.push_back(e);
  m.emplace_back("scale.reference_steps", std::to_string(kReferenceSteps[k]));
  m.emplace_back("scale.step_factor", format_double(static_cast<double>(cfg.total_steps) / static_cast<double>(kReferenceSteps[k])));
  m.emplace_back("scale.reference_batch_size", std::to_string(kReferenceBatch));
  m.emplace_back("scale.reference_resolution", std::to_string(kReferenceResolution[k]));
  for (const auto& e : options.provenance) m.push_back(e);
  m.emplace_back("samples.understanding", std::to_string(result.understanding_samples));
  m.emplace_back("samples.generation", std::to_string(result.generation_samples));
  m.emplace_back("parameters.trainable", std::to_string(trainable.size()));
  m.emplace_back("parameters.frozen", std::to_string(model.params.size() - trainable.size()));
  m.emplace_back("loss.first", format_double(result.losses.front()));
  m.emplace_back("loss.final", format_double(result.losses.back()));
  m.emplace_back("loss.mean_last_50", format_double(mean_tail(result.losses, 50)));
  if (cfg.use_repa && monitor > 0) {
    m.emplace_back("repa_cosine.start", format_double(result.repa_cosine_start));
    m.emplace_back("repa_cosine.end", format_double(result.repa_cosine_end));
  }
  m.emplace_back("checkpoint", result.checkpoint.filename().string());
  m.emplace_back("checkpoint_hash", file_hash(result.checkpoint));
  result.manifest_path = manifest_path_for(result.checkpoint);
  write_kv(result.manifest_path, m);

  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::ofstream(options.out_dir / (name + ".timing")) << "wall_seconds=" << result.wall_seconds << "\n";
  return result;
}

PrepareResult prepare_model(Model& model, const Corpus& corpus, const PrepareOptions& options) {
  const ModelConfig& mc = model.config;
  const Rng root(mix_seed(options.seed, 0xc0dec));
  std::vector<std::vector<double>> train_images, test_images;
  for (std::size_t i : corpus.train_indices()) train_images.push_back(image_at(corpus.samples[i], mc.image_size));
  for (std::size_t i : corpus.test_indices()) test_images.push_back(image_at(corpus.samples[i], mc.image_size));
  if (train_images.empty()) throw std::invalid_argument("prepare needs training images");

  PrepareResult r;
  Rng crng = root.fork(1);
  model.codec = Codec(mc, crng);
  CodecTraining ct;
  ct.steps = options.codec_steps;
  r.codec_train_mse = train_codec(model.codec, train_images, mc.image_size, ct, crng);
  r.codec_heldout_mse = test_images.empty() ? r.codec_train_mse : model.codec.reconstruction_mse(test_images, mc.image_size);
  model.has_codec = true;
  if (options.log) *options.log << "codec: train mse " << r.codec_train_mse << ", held-out mse " << r.codec_heldout_mse << std::endl;

  Rng prng = root.fork(2);
  model.probe = Probe(mc, prng);
  ProbeTraining pt;
  pt.steps = options.probe_steps;
  r.probe_accuracy = train_probe(model.probe, corpus, pt, prng);
  model.has_probe = true;
  if (options.log) *options.log << "probe: held-out accuracy " << r.probe_accuracy << std::endl;
  return r;
}

std::filesystem::path write_initial_checkpoint(const Model& model, const Corpus& corpus, const PrepareResult& prep,
                                               const std::filesystem::path& out_dir, std::uint64_t seed) {
  std::filesystem::create_directories(out_dir);
  const auto path = out_dir / "init.ckpt";
  save_model(path, model);
  const KeyValues m = {{"format", "duet-manifest-1"},
                       {"stage", "0"},
                       {"name", "init"},
                       {"seed", std::to_string(seed)},
                       {"git_describe", git_describe()},
                       {"dataset_hash", dataset_hash(corpus)},
                       {"codec_hash", codec_hash(model)},
                       {"probe_hash", model.has_probe ? model.probe.hash() : "none"},
                       {"codec.train_mse", format_double(prep.codec_train_mse)},
                       {"codec.heldout_mse", format_double(prep.codec_heldout_mse)},
                       {"probe.heldout_accuracy", format_double(prep.probe_accuracy)},
                       {"checkpoint", path.filename().string()},
                       {"checkpoint_hash", file_hash(path)}};
  write_kv(manifest_path_for(path), m);
  return path;
}

}  // namespace duet
