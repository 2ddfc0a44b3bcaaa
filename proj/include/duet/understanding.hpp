#pragma once

// Autoregressive image-to-report branch: patch encoder with one transformer
// block, two-layer connector into the LM width, causal LM backbone.
//
// Sequence layout S = [V, T_in, T_out]. Positions m..n-1 predict S_{m+1..n},
// where n is the last position and m the last prompt position, so exactly
// the T_out tokens are predicted.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "duet/model_config.hpp"
#include "duet/param_tree.hpp"
#include "duet/random.hpp"
#include "duet/tensor.hpp"

namespace duet {

void init_understanding(ParamTree& params, const ModelConfig& cfg, Rng& rng);

// image: image_size^2 pixels -> [P, vision_dim]
Tensor encode_image(const ParamTree& params, const ModelConfig& cfg, const Tensor& image);
// [P, vision_dim] -> [P, model_dim]
Tensor connect(const ParamTree& params, const ModelConfig& cfg, const Tensor& v);

enum class Segment { vision, prompt, report };

struct MultimodalSequence {
  Tensor tokens;                    // [L, d] embedded rows
  std::vector<std::size_t> ids;     // token id per position; vision rows hold kNoToken
  std::vector<Segment> segments;
  std::size_t m = 0;
  std::size_t n = 0;

  static constexpr std::size_t kNoToken = static_cast<std::size_t>(-1);
};

MultimodalSequence build_sequence(const ParamTree& params, const ModelConfig& cfg, const Tensor& image,
                                  const std::vector<std::size_t>& prompt, const std::vector<std::size_t>& report);

// Causal LM stack over embedded rows, final norm applied.
Tensor lm_hidden(const ParamTree& params, const ModelConfig& cfg, const Tensor& rows);

// Cross-entropy over positions m..n-1, divided by n-m unless `sum`.
Tensor ar_loss(const ParamTree& params, const ModelConfig& cfg, const MultimodalSequence& seq, bool sum = false);

// Final hidden states of the LM over a token sequence without image; the
// conditioning rows for the generation branch.
Tensor text_hidden(const ParamTree& params, const ModelConfig& cfg, const std::vector<std::size_t>& ids);

struct DecodeOptions {
  enum class Mode { greedy, sample };
  Mode mode = Mode::greedy;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t max_len = 48;
};

// Decoded ids after the prompt, without the terminating EOS.
std::vector<std::size_t> generate_report(const ParamTree& params, const ModelConfig& cfg, const Tensor& image,
                                         const std::vector<std::size_t>& prompt, const DecodeOptions& options = {});

// Lowest index among maxima.
std::size_t argmax(std::span<const double> v);

}  // namespace duet
