#pragma once

// Procedural image/report corpus. Each scene carries K = 6 binary findings
// with a severity (rendered as intensity) and, for some findings, a
// location. Reports are templated one sentence per present finding, so
// extract_labels inverts them exactly.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "duet/random.hpp"

namespace duet {

inline constexpr std::size_t kNumFindings = 6;

enum class Finding { left_opacity, right_opacity, ring, band, gradient, speckle };

// Report phrase for a finding, e.g. "left opacity".
std::string_view finding_phrase(std::size_t k);
// Short column name, e.g. "left_opacity".
std::string_view finding_name(std::size_t k);
// Location words, or empty when the finding has no location.
std::array<std::string_view, 2> finding_locations(std::size_t k);

inline constexpr std::array<double, 3> kSeverityAmplitude = {0.35, 0.6, 0.85};
inline constexpr std::array<std::string_view, 3> kSeverityWords = {"mild", "moderate", "severe"};

struct FindingSpec {
  bool present = false;
  int severity = 0;  // 0..2
  int location = 0;  // index into finding_locations
};

struct SceneSpec {
  std::array<FindingSpec, kNumFindings> findings{};
  double noise_level = 0.0;  // stddev of the global pixel noise
  std::uint64_t seed = 0;    // drives noise and speckle placement
  int hedge = -1;            // absent finding mentioned as "possible", or -1
};

using Labels = std::array<int, kNumFindings>;

struct CorpusParams {
  std::size_t n = 2000;
  std::uint64_t seed = 1;
  std::size_t resolution = 32;
  double finding_prob = 0.3;
  double hedge_prob = 0.05;
  double max_noise = 0.03;
};

struct SyntheticSample {
  std::size_t index = 0;
  SceneSpec spec;
  std::size_t resolution = 0;
  std::vector<double> image;  // resolution x resolution, values in [0, 1]
  std::string clean_report;
  std::string noisy_report;
  Labels labels{};
};

struct Corpus {
  CorpusParams params;
  std::vector<SyntheticSample> samples;

  std::vector<std::size_t> train_indices() const;
  std::vector<std::size_t> test_indices() const;
};

SceneSpec sample_scene(const CorpusParams& params, Rng& rng);

// Pixel-center sampling of the continuous scene; any resolution >= 16.
std::vector<double> render(const SceneSpec& spec, std::size_t resolution);
// Pixels that finding k may touch at this resolution (1 = inside).
std::vector<std::uint8_t> finding_region(const SceneSpec& spec, std::size_t k, std::size_t resolution);

Labels scene_labels(const SceneSpec& spec);
std::string templated_report(const SceneSpec& spec);
std::string inject_noise(const std::string& clean, Rng& rng);
std::string clean_report(std::string_view noisy);

enum class UncertainMode { as_negative, as_positive };
Labels extract_labels(std::string_view report, UncertainMode mode = UncertainMode::as_negative);

SyntheticSample make_sample(const CorpusParams& params, std::size_t index);
Corpus gen_corpus(const CorpusParams& params);

// Every 20th sample is held out.
bool is_test_index(std::size_t index);

// FNV-1a over parameters, reports, labels and pixel bits.
std::string dataset_hash(const Corpus& corpus);

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& dir);

std::string format_labels(const Labels& labels);

}  // namespace duet
