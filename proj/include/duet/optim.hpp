#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "duet/param_tree.hpp"

namespace duet {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-15;
  double weight_decay = 0.0;
  double clip_norm = 1.0;
};

struct Moments {
  std::vector<double> m;
  std::vector<double> v;
};

// AdamW with decoupled weight decay and bias correction. Gradients of all
// trainable parameters are clipped jointly to `clip_norm` (global L2 norm)
// before the moments are updated. Parameters outside the trainable set get
// no optimizer state and are never written.
class AdamW {
 public:
  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  // Returns the pre-clip global gradient norm.
  double step(ParamTree& params, const std::set<std::string>& trainable, double lr);
  // Every tensor in the map is trainable.
  double step(std::map<std::string, Tensor>& params, double lr);

  const AdamWConfig& config() const { return config_; }
  std::uint64_t step_count() const { return step_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }

  void restore(std::uint64_t step, std::map<std::string, Moments> moments);

 private:
  double step_handles(const std::vector<std::pair<std::string, Tensor>>& trainable, double lr);

  AdamWConfig config_;
  std::uint64_t step_ = 0;
  std::map<std::string, Moments> moments_;
};

}  // namespace duet
