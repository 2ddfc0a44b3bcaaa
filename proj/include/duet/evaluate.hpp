#pragma once

// Test-split evaluation of a model: decoded reports -> F1 block, sampled
// images -> probe-feature distances, alignment and PRDC.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>

#include "duet/kv_text.hpp"
#include "duet/metrics.hpp"
#include "duet/model.hpp"
#include "duet/synthetic.hpp"

namespace duet {

struct EvalOptions {
  bool understanding = true;
  bool generation = true;
  std::size_t max_samples = 0;  // 0 = whole test split
  std::size_t sample_steps = 25;
  std::size_t resolution = 32;
  std::uint64_t seed = 0;
  std::size_t prdc_k = 5;
  std::ostream* log = nullptr;
};

struct MetricReport {
  static constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

  std::string probe_hash;
  std::size_t understanding_samples = 0;
  std::size_t generation_samples = 0;
  std::size_t resolution = 0;

  F1Result f1_negative;  // hedged mentions count as absent
  F1Result f1_positive;  // hedged mentions count as present
  F1Result f1_all_negative_baseline;

  double fd = kNa;
  double kd = kNa;
  double alignment = kNa;
  double alignment_chance = kNa;  // conditions paired with another sample's image
  double alignment_real = kNa;    // probe on the real test images
  Prdc prdc{kNa, kNa, kNa, kNa};
  std::array<double, kNumFindings> fd_per_finding{};
  std::array<std::size_t, kNumFindings> count_per_finding{};
};

MetricReport evaluate(const Model& model, const Corpus& corpus, const EvalOptions& options = {});

// One metric per line; unavailable values print as "na".
KeyValues metric_report_kv(const MetricReport& report);

}  // namespace duet
