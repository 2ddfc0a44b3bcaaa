#include "duet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "duet/random.hpp"

namespace duet {

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, const GradCheckOptions& options) {
  if (!x.requires_grad()) throw std::invalid_argument("grad_check needs a tensor that requires grad");
  x.zero_grad();
  backward(f(x));
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  std::vector<std::size_t> which(x.numel());
  std::iota(which.begin(), which.end(), 0);
  if (options.max_elements > 0 && which.size() > options.max_elements) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_elements; ++i) std::swap(which[i], which[i + rng.below(which.size() - i)]);
    which.resize(options.max_elements);
    std::sort(which.begin(), which.end());
  }

  NoGradGuard no_grad;
  auto values = x.mutable_data();
  double worst = 0.0;
  for (std::size_t i : which) {
    const double saved = values[i];
    values[i] = saved + options.eps;
    const double up = f(x).item();
    values[i] = saved - options.eps;
    const double down = f(x).item();
    values[i] = saved;
    const double numeric = (up - down) / (2.0 * options.eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), 1e-8);
    if (!(err <= worst)) worst = err;  // NaN sticks
  }
  return worst;
}

}  // namespace duet
