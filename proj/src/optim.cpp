#include "emi/optim.hpp"

#include <cmath>
#include <numbers>

#include "emi/kernels.hpp"

namespace emi::optim {

double global_grad_norm(std::span<Param* const> params) {
  double sum = 0.0;
  for (const Param* p : params) {
    for (double g : p->grad.data()) sum += g * g;
  }
  return std::sqrt(sum);
}

ClipResult clip_global_norm(std::span<Param* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip norm must be positive");
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm <= max_norm) return {norm, 1.0};
  const double factor = max_norm / norm;
  const auto& k = kernels::active();
  for (Param* p : params) k.scale(p->grad.size(), p->grad.data().data(), factor, p->grad.data().data());
  return {norm, factor};
}

double cosine_lr(double t, double total, double lr0, double lr_min) {
  if (!(total > 0.0)) throw ConfigError("cosine schedule horizon must be positive");
  if (t < 0.0 || t > total) throw ConfigError("cosine schedule position outside [0, T]");
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

AdamW::AdamW(std::span<Param* const> params, AdamWConfig config) : config_(config) {
  if (!(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 && config.beta2 < 1.0)) {
    throw ConfigError("AdamW betas must lie in [0, 1)");
  }
  if (!(config.eps > 0.0) || config.weight_decay < 0.0) throw ConfigError("AdamW eps/weight decay invalid");
  for (const Param* p : params) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(std::span<Param* const> params, double lr) {
  if (params.size() != m_.size()) throw DimensionError("AdamW: parameter list changed since construction");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  ++step_;
  const kernels::AdamWArgs args{
      lr,
      config_.beta1,
      config_.beta2,
      config_.eps,
      config_.weight_decay,
      1.0 - std::pow(config_.beta1, static_cast<double>(step_)),
      1.0 - std::pow(config_.beta2, static_cast<double>(step_)),
  };
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    require_same_shape(p.value, m_[i], "AdamW");
    k.adamw(p.value.size(), args, p.grad.data().data(), p.value.data().data(), m_[i].data().data(),
            v_[i].data().data());
    if (!p.value.all_finite()) throw NumericError("AdamW produced a non-finite value in " + p.name);
  }
}

Ema::Ema(std::span<Param* const> params, double decay) : decay_(decay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("EMA decay must lie in [0, 1]");
  for (const Param* p : params) shadows_.push_back(p->value);
}

void Ema::update(std::span<Param* const> params) {
  if (params.size() != shadows_.size()) throw DimensionError("EMA: parameter list changed since construction");
  const auto& k = kernels::active();
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value, shadows_[i], "EMA");
    k.ema(shadows_[i].size(), decay_, params[i]->value.data().data(), shadows_[i].data().data());
  }
  ++updates_;
}

std::vector<Tensor> snapshot(std::span<Param* const> params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const Param* p : params) out.push_back(p->value);
  return out;
}

void load_values(std::span<Param* const> params, const std::vector<Tensor>& values) {
  if (params.size() != values.size()) throw DimensionError("parameter count mismatch while loading values");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i]->value, values[i], params[i]->name.c_str());
    params[i]->value = values[i];
  }
}

}  // namespace emi::optim
