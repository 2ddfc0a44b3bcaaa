#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "duet/tensor.hpp"

namespace duet {

struct GradCheckOptions {
  double eps = 1e-5;
  // 0 checks every element; otherwise a seeded subset of this many.
  std::size_t max_elements = 0;
  std::uint64_t seed = 0;
};

// Compares the tape gradient of the scalar f(x) with central differences and
// returns max |analytic - numeric| / max(|numeric|, 1e-8) over the checked
// elements. `x` must be a leaf that requires grad; its grad is overwritten.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, const GradCheckOptions& options = {});

}  // namespace duet
