#include "duet/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "duet/kernels.hpp"

namespace duet {

double AdamW::step(ParamTree& params, const std::set<std::string>& trainable, double lr) {
  std::vector<std::pair<std::string, Tensor>> handles;
  handles.reserve(trainable.size());
  for (const auto& name : trainable) handles.emplace_back(name, params.at(name));
  return step_handles(handles, lr);
}

double AdamW::step(std::map<std::string, Tensor>& params, double lr) {
  std::vector<std::pair<std::string, Tensor>> handles(params.begin(), params.end());
  return step_handles(handles, lr);
}

double AdamW::step_handles(const std::vector<std::pair<std::string, Tensor>>& trainable, double lr) {
  double sq = 0.0;
  for (const auto& [name, p] : trainable) {
    if (!p.requires_grad() || p.grad().size() != p.numel())
      throw std::logic_error("missing gradient for trainable parameter '" + name + "'");
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double scale = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

  ++step_;
  const auto t = static_cast<double>(step_);
  const kernels::AdamArgs args{lr,
                               config_.beta1,
                               config_.beta2,
                               config_.eps,
                               config_.weight_decay,
                               1.0 - std::pow(config_.beta1, t),
                               1.0 - std::pow(config_.beta2, t),
                               scale};
  const auto& k = kernels::active();
  for (const auto& [name, handle] : trainable) {
    Tensor p = handle;
    auto& mom = moments_[name];
    if (mom.m.size() != p.numel()) {
      mom.m.assign(p.numel(), 0.0);
      mom.v.assign(p.numel(), 0.0);
    }
    k.adamw(p.numel(), p.mutable_data().data(), p.grad().data(), mom.m.data(), mom.v.data(), args);
  }
  return norm;
}

void AdamW::restore(std::uint64_t step, std::map<std::string, Moments> moments) {
  step_ = step;
  moments_ = std::move(moments);
}

}  // namespace duet
