#pragma once

// Metric suite over label vectors and probe feature sets.

#include <array>
#include <cstddef>
#include <vector>

#include "duet/synthetic.hpp"

namespace duet {

struct F1Result {
  double micro = 0.0;
  double macro = 0.0;
  std::array<double, kNumFindings> per_finding{};
};

// Findings without positive ground truth score 0 in the macro mean; micro
// is 0 when there is nothing to count.
F1Result micro_macro_f1(const std::vector<Labels>& predicted, const std::vector<Labels>& truth);

using FeatureSet = std::vector<std::vector<double>>;

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}); needs more samples
// than feature dimensions in both sets.
double frechet_distance(const FeatureSet& a, const FeatureSet& b);

// Unbiased squared MMD with kernel (x.y / dim + 1)^3.
double kernel_distance(const FeatureSet& a, const FeatureSet& b);

struct Prdc {
  double precision = 0.0;
  double recall = 0.0;
  double density = 0.0;
  double coverage = 0.0;
};

// k-nearest-neighbour ball definitions; a point is inside a ball when its
// distance is strictly smaller than the radius.
Prdc prdc(const FeatureSet& real, const FeatureSet& fake, std::size_t k = 5);

// Mean per-finding agreement between predicted and conditioning labels.
double label_agreement(const std::vector<Labels>& predicted, const std::vector<Labels>& conditions);

}  // namespace duet
