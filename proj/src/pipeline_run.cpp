#include "duet/pipeline_run.hpp"

#include <ostream>
#include <stdexcept>

#include "duet/generation.hpp"

namespace duet {

namespace {

std::size_t get_size(const std::map<std::string, std::string>& kv, const std::string& key, std::size_t fallback) {
  const auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  try {
    std::size_t used = 0;
    const auto v = std::stoull(it->second, &used);
    if (used == it->second.size()) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw std::invalid_argument(key + ": expected a non-negative integer, got '" + it->second + "'");
}

std::map<std::string, std::string> with_stage(const std::map<std::string, std::string>& kv, int stage) {
  const std::string prefix = "stage" + std::to_string(stage) + ".";
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : kv)
    if (k.rfind(prefix, 0) == 0) out[k] = v;
  out[prefix + "stage"] = std::to_string(stage);
  return out;
}

KeyValues provenance_from(const std::filesystem::path& prev_ckpt) {
  const auto m = manifest_path_for(prev_ckpt);
  return {{"previous.manifest", m.filename().string()},
          {"previous.manifest_hash", file_hash(m)},
          {"previous.checkpoint_hash", file_hash(prev_ckpt)}};
}

}  // namespace

PipelineConfig pipeline_config_from_kv(const std::map<std::string, std::string>& kv) {
  static const std::set<std::string> top = {"seed",
                                            "corpus.n",
                                            "corpus.seed",
                                            "corpus.resolution",
                                            "prepare.codec_steps",
                                            "prepare.probe_steps",
                                            "eval.max_samples",
                                            "eval.sample_steps"};
  for (const auto& [k, v] : kv)
    if (!top.count(k) && k.rfind("stage1.", 0) != 0 && k.rfind("stage2.", 0) != 0 && k.rfind("stage3.", 0) != 0)
      throw std::invalid_argument("unknown pipeline config key '" + k + "'");
  PipelineConfig c;
  c.seed = get_size(kv, "seed", c.seed);
  c.corpus.n = get_size(kv, "corpus.n", c.corpus.n);
  c.corpus.seed = get_size(kv, "corpus.seed", c.corpus.seed);
  c.corpus.resolution = get_size(kv, "corpus.resolution", c.corpus.resolution);
  c.prepare.codec_steps = get_size(kv, "prepare.codec_steps", c.prepare.codec_steps);
  c.prepare.probe_steps = get_size(kv, "prepare.probe_steps", c.prepare.probe_steps);
  c.eval_max_samples = get_size(kv, "eval.max_samples", c.eval_max_samples);
  c.eval_sample_steps = get_size(kv, "eval.sample_steps", c.eval_sample_steps);
  for (int s = 1; s <= 3; ++s) {
    c.stages[s - 1] = stage_config_from_kv(with_stage(kv, s), "stage" + std::to_string(s) + ".");
    check_stage_invariants(c.stages[s - 1]);
  }
  return c;
}

KeyValues pipeline_config_to_kv(const PipelineConfig& c) {
  KeyValues kv = {{"seed", std::to_string(c.seed)},
                  {"corpus.n", std::to_string(c.corpus.n)},
                  {"corpus.seed", std::to_string(c.corpus.seed)},
                  {"corpus.resolution", std::to_string(c.corpus.resolution)},
                  {"prepare.codec_steps", std::to_string(c.prepare.codec_steps)},
                  {"prepare.probe_steps", std::to_string(c.prepare.probe_steps)},
                  {"eval.max_samples", std::to_string(c.eval_max_samples)},
                  {"eval.sample_steps", std::to_string(c.eval_sample_steps)}};
  for (int s = 1; s <= 3; ++s)
    for (auto& e : stage_config_to_kv(c.stages[s - 1], "stage" + std::to_string(s) + ".")) kv.push_back(e);
  return kv;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out, std::ostream* log) {
  for (const auto& s : cfg.stages) check_stage_invariants(s);
  std::filesystem::create_directories(out);
  PipelineResult r;

  const Corpus corpus = gen_corpus(cfg.corpus);
  save_corpus(out / "corpus", corpus);
  if (log) *log << "corpus: " << corpus.samples.size() << " samples, hash " << dataset_hash(corpus) << std::endl;

  ModelConfig mc;
  mc.image_size = cfg.corpus.resolution;
  mc.probe_resolution = cfg.corpus.resolution;
  Model model = init_model(mc, cfg.seed);
  PrepareOptions po = cfg.prepare;
  po.seed = cfg.seed;
  po.log = log;
  r.prepare = prepare_model(model, corpus, po);
  std::filesystem::path prev = write_initial_checkpoint(model, corpus, r.prepare, out, cfg.seed);

  EvalOptions eval;
  eval.max_samples = cfg.eval_max_samples;
  eval.sample_steps = cfg.eval_sample_steps;
  eval.seed = cfg.seed;
  eval.log = log;

  for (int s = 1; s <= 3; ++s) {
    verify_previous_stage(prev, s - 1);
    if (s == 2) {
      Model untrained = model;
      untrained.params = model.params.clone();
      inherit_backbone(untrained.params, untrained.config);
      EvalOptions e = eval;
      e.understanding = false;
      e.resolution = cfg.stages[2].image_resolution;
      r.baseline = evaluate(untrained, corpus, e);
      write_kv(out / "baseline.metrics", metric_report_kv(r.baseline));
    }
    StageOptions so;
    so.seed = cfg.seed;
    so.out_dir = out;
    so.log = log;
    so.provenance = provenance_from(prev);
    r.stages.push_back(run_stage(cfg.stages[s - 1], model, corpus, so));
    prev = r.stages.back().checkpoint;
    if (s == 1) {
      EvalOptions e = eval;
      e.generation = false;
      r.after_stage1 = evaluate(model, corpus, e);
      write_kv(out / "stage1.metrics", metric_report_kv(r.after_stage1));
    } else if (s == 2) {
      EvalOptions e = eval;
      e.understanding = false;
      e.resolution = cfg.stages[1].image_resolution;
      r.after_stage2 = evaluate(model, corpus, e);
      write_kv(out / "stage2.metrics", metric_report_kv(r.after_stage2));
    }
  }
  EvalOptions e = eval;
  e.resolution = cfg.stages[2].image_resolution;
  r.final_report = evaluate(model, corpus, e);
  write_kv(out / "final.metrics", metric_report_kv(r.final_report));

  KeyValues m = {{"format", "duet-pipeline-1"}, {"git_describe", git_describe()}, {"dataset_hash", dataset_hash(corpus)}};
  for (auto& kv : pipeline_config_to_kv(cfg)) m.push_back(kv);
  m.emplace_back("prepare.codec_heldout_mse", format_double(r.prepare.codec_heldout_mse));
  m.emplace_back("prepare.probe_accuracy", format_double(r.prepare.probe_accuracy));
  for (const auto& s : r.stages) {
    m.emplace_back(s.manifest.at(2).second + ".checkpoint_hash", file_hash(s.checkpoint));
    m.emplace_back(s.manifest.at(2).second + ".loss_final", format_double(s.losses.back()));
  }
  m.emplace_back("stage1.micro_f1", format_double(r.after_stage1.f1_negative.micro));
  m.emplace_back("baseline.fd", format_double(r.baseline.fd));
  m.emplace_back("stage2.fd", format_double(r.after_stage2.fd));
  m.emplace_back("final.fd", format_double(r.final_report.fd));
  m.emplace_back("final.alignment", format_double(r.final_report.alignment));
  m.emplace_back("final.alignment_chance", format_double(r.final_report.alignment_chance));
  m.emplace_back("final.micro_f1", format_double(r.final_report.f1_negative.micro));
  write_kv(out / "pipeline.manifest", m);
  return r;
}

}  // namespace duet
