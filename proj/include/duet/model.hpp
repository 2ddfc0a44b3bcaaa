#pragma once

// The full model: both branches' parameters plus the frozen codec and probe
// assets, and the glue used by the CLI (report decoding, conditional image
// sampling).

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/codec.hpp"
#include "duet/model_config.hpp"
#include "duet/param_tree.hpp"
#include "duet/probe.hpp"

namespace duet {

struct Model {
  ModelConfig config;
  ParamTree params;
  Codec codec;
  Probe probe;
  bool has_codec = false;
  bool has_probe = false;
  std::map<std::string, std::string> meta;  // persisted as "model.<key>"
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

Checkpoint model_checkpoint(const Model& model, const AdamW* optimizer = nullptr,
                            const std::map<std::string, std::string>& extra_meta = {});
Model model_from_checkpoint(const Checkpoint& ckpt);
void save_model(const std::filesystem::path& path, const Model& model, const AdamW* optimizer = nullptr,
                const std::map<std::string, std::string>& extra_meta = {});
Model load_model(const std::filesystem::path& path);

// Conditioning rows for a report text (no gradient).
Tensor condition_rows(const Model& model, const std::string& report);

std::string describe_image(const Model& model, const std::vector<double>& image, const std::string& prompt = "",
                           std::size_t max_len = 48);

struct GenerateOptions {
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  std::size_t resolution = 32;
};

std::vector<double> generate_image(const Model& model, const std::string& report, const GenerateOptions& options);
std::vector<double> generate_image(const Model& model, const Tensor& cond, const GenerateOptions& options);

}  // namespace duet
