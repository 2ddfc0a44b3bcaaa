#pragma once

// Three-stage freeze-scheduled training.
//   stage 1: understanding trains on image->report pairs, generation frozen
//   stage 2: generation trains (flow + alignment loss), understanding frozen;
//            the generation backbone is first copied from the LM
//   stage 3: as stage 2 at double resolution, flow loss only
// Every stage writes <name>.ckpt, <name>.manifest (key=value),
// <name>.loss.txt and a <name>.timing sidecar with wall-clock time.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "duet/kv_text.hpp"
#include "duet/model.hpp"
#include "duet/synthetic.hpp"

namespace duet {

struct StageConfig {
  int stage = 1;
  double learning_rate = 1e-4;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 100;
  std::size_t image_resolution = 32;
  bool use_repa = false;
  double repa_weight = 0.5;
  std::size_t batch_size = 16;
  std::set<Branch> freeze;
  // understanding : generation samples per batch
  std::size_t mix_understanding = 1;
  std::size_t mix_generation = 0;
  bool sum_loss = false;  // literal summed cross-entropy instead of the per-token mean
};

// Desk-scale defaults; learning rates, warmup shape, REPA settings and
// freezing follow the reference schedule.
StageConfig default_stage_config(int stage);

StageConfig stage_config_from_kv(const std::map<std::string, std::string>& kv, const std::string& prefix = "");
KeyValues stage_config_to_kv(const StageConfig& cfg, const std::string& prefix = "");
// Freezing and REPA invariants of the three stages; throws when violated.
void check_stage_invariants(const StageConfig& cfg);

struct BatchPlan {
  std::size_t understanding = 0;
  std::size_t generation = 0;
};

// Generation samples per batch = batch_size when the generation share is
// non-zero, understanding samples scale with the ratio; a pure
// understanding ratio uses batch_size understanding samples.
BatchPlan batch_plan(const StageConfig& cfg);

// Linear warmup from 0 over warmup_steps, then constant. Steps count from 1.
double learning_rate_at(const StageConfig& cfg, std::size_t step);

// Names of all parameters whose branch is not frozen. Throws when empty.
std::set<std::string> freeze_mask(const ParamTree& params, const std::set<Branch>& frozen);

struct StageOptions {
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = ".";
  std::string name;  // file stem, default "stage<k>"
  std::ostream* log = nullptr;
  std::size_t log_every = 50;
  double checkpoint_fraction = 0.2;
  std::size_t repa_monitor_samples = 32;
  KeyValues provenance;  // copied into the manifest
};

struct StageResult {
  KeyValues manifest;
  std::vector<double> losses;
  std::filesystem::path checkpoint;
  std::filesystem::path manifest_path;
  double repa_cosine_start = std::numeric_limits<double>::quiet_NaN();
  double repa_cosine_end = std::numeric_limits<double>::quiet_NaN();
  std::size_t understanding_samples = 0;
  std::size_t generation_samples = 0;
  double wall_seconds = 0.0;
};

StageResult run_stage(const StageConfig& cfg, Model& model, const Corpus& corpus, const StageOptions& options);

// Mean cosine between projected alignment-layer states and probe tokens
// over a fixed set of training samples (fixed noise and times).
double repa_cosine(const Model& model, const Corpus& corpus, std::size_t samples, std::uint64_t seed);

// Provenance chain: the manifest next to `checkpoint` must exist, name
// stage `expected_stage` and match the checkpoint's content hash.
std::map<std::string, std::string> verify_previous_stage(const std::filesystem::path& checkpoint, int expected_stage);
std::filesystem::path manifest_path_for(const std::filesystem::path& checkpoint);

std::string git_describe();

struct PrepareOptions {
  std::uint64_t seed = 0;
  std::size_t codec_steps = 1500;
  std::size_t probe_steps = 1200;
  std::ostream* log = nullptr;
};

struct PrepareResult {
  double codec_train_mse = 0.0;
  double codec_heldout_mse = 0.0;
  double probe_accuracy = 0.0;
};

// Initializes the model and trains the frozen codec and probe on the
// training split.
PrepareResult prepare_model(Model& model, const Corpus& corpus, const PrepareOptions& options);
// Writes <out_dir>/init.ckpt and its stage-0 manifest.
std::filesystem::path write_initial_checkpoint(const Model& model, const Corpus& corpus, const PrepareResult& prep,
                                               const std::filesystem::path& out_dir, std::uint64_t seed);

}  // namespace duet
