// duet command-line front end.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>

#include "duet/ablation.hpp"
#include "duet/evaluate.hpp"
#include "duet/image_io.hpp"
#include "duet/kernels.hpp"
#include "duet/kv_text.hpp"
#include "duet/model.hpp"
#include "duet/pipeline.hpp"
#include "duet/pipeline_run.hpp"
#include "duet/synthetic.hpp"

namespace fs = std::filesystem;
using namespace duet;

namespace {

void reject_unknown(const std::map<std::string, std::string>& kv, const std::set<std::string>& allowed, const std::string& what) {
  for (const auto& [k, v] : kv)
    if (!allowed.count(k)) throw std::invalid_argument(what + ": unknown key '" + k + "'");
}

std::vector<double> image_for_model(const Model& model, const Image& img) {
  if (img.channels != 1 || img.height != img.width)
    throw std::invalid_argument("expected a square single-channel image, got " + std::to_string(img.height) + "x" +
                                std::to_string(img.width) + "x" + std::to_string(img.channels));
  const std::size_t want = model.config.image_size;
  if (img.height == want) return img.pixels;
  if (img.height % want == 0) return downsample(img.pixels, img.height, img.height / want);
  throw std::invalid_argument("image side " + std::to_string(img.height) + " is not a multiple of " + std::to_string(want));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"duet: dual-branch report understanding and image generation"};
  app.require_subcommand(1);
  std::string kernel;
  app.add_option("--kernels", kernel, "force a kernel table (scalar, avx2)");

  // datagen
  auto* datagen = app.add_subcommand("datagen", "generate a synthetic corpus directory");
  CorpusParams cp;
  std::string out_dir;
  datagen->add_option("--n", cp.n, "number of samples")->check(CLI::PositiveNumber);
  datagen->add_option("--seed", cp.seed, "generator seed");
  datagen->add_option("--res", cp.resolution, "image resolution")->check(CLI::Range(16, 4096));
  datagen->add_option("--out", out_dir, "output directory")->required();

  // prepare
  auto* prepare = app.add_subcommand("prepare", "initialize a model and train the codec and probe");
  std::string corpus_dir;
  std::uint64_t seed = 7;
  PrepareOptions popts;
  prepare->add_option("--corpus", corpus_dir, "corpus directory")->required();
  prepare->add_option("--out", out_dir, "output directory (init.ckpt, init.manifest)")->required();
  prepare->add_option("--seed", seed, "model seed");
  prepare->add_option("--codec-steps", popts.codec_steps, "codec training steps");
  prepare->add_option("--probe-steps", popts.probe_steps, "probe training steps");

  // train
  auto* train = app.add_subcommand("train", "run one training stage");
  int stage = 1;
  std::string config_path, resume;
  train->add_option("--stage", stage, "stage (1, 2 or 3)")->required()->check(CLI::Range(1, 3));
  train->add_option("--config", config_path, "stage config (key=value)")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "checkpoint of the previous stage (init.ckpt for stage 1)")->required();
  train->add_option("--corpus", corpus_dir, "corpus directory")->required();
  train->add_option("--out", out_dir, "output directory (default: next to --resume)");
  train->add_option("--seed", seed, "training seed");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "joint-optimization ablation grid");
  std::string grid_path, checkpoint;
  ablate->add_option("--grid", grid_path, "grid file (key=value)")->required()->check(CLI::ExistingFile);
  ablate->add_option("--checkpoint", checkpoint, "stage-2 checkpoint (overrides the grid's checkpoint key)");
  ablate->add_option("--corpus", corpus_dir, "corpus directory (overrides the grid's corpus key)");
  ablate->add_option("--out", out_dir, "output directory (overrides the grid's out key)");

  // understand
  auto* understand = app.add_subcommand("understand", "decode a report for an image");
  std::string image_path, prompt;
  understand->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  understand->add_option("--image", image_path, "image file")->required()->check(CLI::ExistingFile);
  understand->add_option("--prompt", prompt, "instruction words (default: describe the findings)");

  // generate
  auto* generate = app.add_subcommand("generate", "sample an image for a report");
  std::string report, out_path;
  GenerateOptions gopts;
  generate->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--report", report, "conditioning report")->required();
  generate->add_option("--steps", gopts.steps, "Euler steps")->check(CLI::PositiveNumber);
  generate->add_option("--seed", gopts.seed, "noise seed");
  generate->add_option("--res", gopts.resolution, "output resolution");
  generate->add_option("--out", out_path, "output image file")->required();

  // evaluate
  auto* evaluate_cmd = app.add_subcommand("evaluate", "metric report on the test split");
  EvalOptions eopts;
  std::size_t eval_res = 0;
  bool no_understanding = false, no_generation = false;
  evaluate_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--corpus", corpus_dir, "corpus directory")->required();
  evaluate_cmd->add_option("--out", out_path, "metric report file")->required();
  evaluate_cmd->add_option("--steps", eopts.sample_steps, "Euler steps for sampling");
  evaluate_cmd->add_option("--seed", eopts.seed, "sampling seed");
  evaluate_cmd->add_option("--max-samples", eopts.max_samples, "limit the test split (0 = all)");
  evaluate_cmd->add_option("--res", eval_res, "generation resolution (default: last trained resolution)");
  evaluate_cmd->add_flag("--no-understanding", no_understanding, "skip report decoding");
  evaluate_cmd->add_flag("--no-generation", no_generation, "skip image sampling");

  // pipeline
  auto* pipeline = app.add_subcommand("pipeline", "corpus, prepare, stages 1-3 and evaluation in one run");
  pipeline->add_option("--config", config_path, "pipeline config (key=value)")->check(CLI::ExistingFile);
  pipeline->add_option("--out", out_dir, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (!kernel.empty()) kernels::select(kernel);

    if (*datagen) {
      const Corpus c = gen_corpus(cp);
      save_corpus(out_dir, c);
      std::cout << "wrote " << c.samples.size() << " samples to " << out_dir << " (dataset_hash " << dataset_hash(c) << ")\n";
    } else if (*prepare) {
      const Corpus c = load_corpus(corpus_dir);
      ModelConfig mc;
      mc.image_size = c.params.resolution;
      mc.probe_resolution = c.params.resolution;
      Model model = init_model(mc, seed);
      popts.seed = seed;
      popts.log = &std::cerr;
      const PrepareResult pr = prepare_model(model, c, popts);
      std::cout << write_initial_checkpoint(model, c, pr, out_dir, seed).string() << "\n";
    } else if (*train) {
      const auto kv = read_kv(config_path);
      reject_unknown(kv,
                     {"stage", "learning_rate", "warmup_steps", "total_steps", "image_resolution", "use_repa",
                      "repa_weight", "batch_size", "freeze", "mixing_ratio", "sum_loss"},
                     config_path);
      if (kv.count("stage") && kv.at("stage") != std::to_string(stage))
        throw std::invalid_argument(config_path + " describes stage " + kv.at("stage") + ", not stage " + std::to_string(stage));
      auto full = kv;
      full["stage"] = std::to_string(stage);
      const StageConfig cfg = stage_config_from_kv(full);
      check_stage_invariants(cfg);
      verify_previous_stage(resume, stage - 1);
      const Corpus c = load_corpus(corpus_dir);
      Model model = load_model(resume);
      StageOptions so;
      so.seed = seed;
      so.out_dir = out_dir.empty() ? fs::path(resume).parent_path() : fs::path(out_dir);
      if (so.out_dir.empty()) so.out_dir = ".";
      so.log = &std::cerr;
      const auto prev_manifest = manifest_path_for(resume);
      so.provenance = {{"previous.manifest", prev_manifest.filename().string()},
                       {"previous.manifest_hash", file_hash(prev_manifest)},
                       {"previous.checkpoint_hash", file_hash(resume)}};
      const StageResult r = run_stage(cfg, model, c, so);
      std::cout << r.manifest_path.string() << "\n";
    } else if (*ablate) {
      const auto kv = read_kv(grid_path);
      auto grid_kv = kv;
      for (const char* k : {"checkpoint", "corpus", "out"}) grid_kv.erase(k);
      const AblationGrid grid = ablation_grid_from_kv(grid_kv);
      if (checkpoint.empty() && kv.count("checkpoint")) checkpoint = kv.at("checkpoint");
      if (corpus_dir.empty() && kv.count("corpus")) corpus_dir = kv.at("corpus");
      if (out_dir.empty()) out_dir = kv.count("out") ? kv.at("out") : "ablation";
      if (checkpoint.empty() || corpus_dir.empty()) throw std::invalid_argument("ablate needs a checkpoint and a corpus");
      verify_previous_stage(checkpoint, 2);
      const Corpus c = load_corpus(corpus_dir);
      const Model start = load_model(checkpoint);
      const AblationOutcome o = run_ablation(grid, start, c, out_dir, &std::cerr);
      const std::string table = ablation_table(o);
      write_text(fs::path(out_dir) / "ablation.tsv", table);
      std::cout << table;
    } else if (*understand) {
      const Model model = load_model(checkpoint);
      std::cout << describe_image(model, image_for_model(model, load_image(image_path)), prompt) << "\n";
    } else if (*generate) {
      const Model model = load_model(checkpoint);
      const auto px = generate_image(model, report, gopts);
      save_image(out_path, Image{gopts.resolution, gopts.resolution, 1, px});
      fs::path side = out_path;
      side += ".txt";
      write_kv(side, {{"condition", report},
                      {"seed", std::to_string(gopts.seed)},
                      {"steps", std::to_string(gopts.steps)},
                      {"resolution", std::to_string(gopts.resolution)},
                      {"checkpoint_hash", file_hash(checkpoint)}});
      std::cout << out_path << "\n";
    } else if (*evaluate_cmd) {
      const Model model = load_model(checkpoint);
      const Corpus c = load_corpus(corpus_dir);
      eopts.understanding = !no_understanding;
      eopts.generation = !no_generation;
      eopts.resolution = eval_res;
      if (eopts.resolution == 0) {
        const auto it = model.meta.find("last_resolution");
        eopts.resolution = it == model.meta.end() ? model.config.image_size : std::stoul(it->second);
      }
      eopts.log = &std::cerr;
      const MetricReport r = evaluate(model, c, eopts);
      write_kv(out_path, metric_report_kv(r));
      std::cout << format_kv(metric_report_kv(r));
    } else if (*pipeline) {
      const PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : pipeline_config_from_kv(read_kv(config_path));
      run_pipeline(cfg, out_dir, &std::cerr);
      std::cout << std::ifstream(fs::path(out_dir) / "pipeline.manifest").rdbuf();
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
