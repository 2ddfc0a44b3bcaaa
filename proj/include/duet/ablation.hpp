#pragma once

// Joint-optimization ablation: starting from the stage-2 checkpoint, each
// row continues generation training for a fixed step budget with either the
// understanding branch frozen (generation data only) or both branches
// trainable under an understanding:generation data ratio. Rows are scored
// on understanding F1 and generation FD/KD.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "duet/evaluate.hpp"
#include "duet/pipeline.hpp"

namespace duet {

struct AblationRow {
  std::string name;
  bool freeze_understanding = true;
  std::size_t understanding = 0;  // mixing ratio understanding:generation
  std::size_t generation = 1;
};

// frozen 0:1, then joint 1:1, 1:2, 1:4, 0:1.
std::vector<AblationRow> default_ablation_rows();

struct AblationGrid {
  std::vector<AblationRow> rows = default_ablation_rows();
  StageConfig base = default_stage_config(2);  // lr, batch size, alignment loss
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  EvalOptions eval;
};

// Keys: steps, seed, learning_rate, warmup_steps, batch_size, use_repa,
// repa_weight, rows (name:freeze|joint:r:s,...), eval.max_samples,
// eval.sample_steps.
AblationGrid ablation_grid_from_kv(const std::map<std::string, std::string>& kv);
KeyValues ablation_grid_to_kv(const AblationGrid& grid);

struct AblationResult {
  AblationRow row;
  MetricReport metrics;
  double final_loss = 0.0;
};

struct AblationOutcome {
  MetricReport before;  // the starting checkpoint
  std::vector<AblationResult> rows;
};

AblationOutcome run_ablation(const AblationGrid& grid, const Model& start, const Corpus& corpus,
                             const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Tab-separated, header first; the starting checkpoint is the "before" row.
std::string ablation_table(const AblationOutcome& outcome);

}  // namespace duet
