#pragma once

// End-to-end run: corpus -> prepare (codec, probe) -> stages 1-3 with
// evaluations in between. Everything lands in one output directory:
//   corpus/               generated corpus
//   init.ckpt|manifest    initialized model with trained codec and probe
//   stage{1,2,3}.*        stage outputs (see pipeline.hpp)
//   stage1.metrics        understanding metrics after stage 1
//   baseline.metrics      generation metrics before generation training
//   stage2.metrics        generation metrics after stage 2
//   final.metrics         full metric report after stage 3
//   pipeline.manifest     summary

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "duet/evaluate.hpp"
#include "duet/pipeline.hpp"

namespace duet {

struct PipelineConfig {
  std::uint64_t seed = 7;
  CorpusParams corpus;
  PrepareOptions prepare;
  std::array<StageConfig, 3> stages = {default_stage_config(1), default_stage_config(2), default_stage_config(3)};
  std::size_t eval_max_samples = 0;
  std::size_t eval_sample_steps = 25;
};

// Keys: seed, corpus.{n,seed,resolution}, prepare.{codec_steps,probe_steps},
// stage{1,2,3}.<StageConfig field>, eval.{max_samples,sample_steps}.
PipelineConfig pipeline_config_from_kv(const std::map<std::string, std::string>& kv);
KeyValues pipeline_config_to_kv(const PipelineConfig& cfg);

struct PipelineResult {
  std::vector<StageResult> stages;
  PrepareResult prepare;
  MetricReport after_stage1;
  MetricReport baseline;
  MetricReport after_stage2;
  MetricReport final_report;
};

PipelineResult run_pipeline(const PipelineConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

}  // namespace duet
