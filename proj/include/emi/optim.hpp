#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "emi/layers.hpp"

namespace emi::optim {

struct ClipResult {
  double norm;    // global norm before clipping
  double factor;  // scale applied to every gradient (1 when not clipped)
};

// sqrt of the sum of squared entries over every gradient, in parameter order.
double global_grad_norm(std::span<Param* const> params);

// Rescales all gradients by max_norm / norm when the global norm exceeds
// max_norm. Throws NumericError on a non-finite norm.
ClipResult clip_global_norm(std::span<Param* const> params, double max_norm);

// eta_min + (eta0 - eta_min) (1 + cos(pi t / T)) / 2 for 0 <= t <= T.
double cosine_lr(double t, double total, double lr0, double lr_min = 0.0);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// Adam with weight decay decoupled from the gradient:
//   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
class AdamW {
 public:
  AdamW(std::span<Param* const> params, AdamWConfig config = {});

  void step(std::span<Param* const> params, double lr);

  std::uint64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  AdamWConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t step_ = 0;
};

// Exponential moving average of the parameters. Shadows start as a copy of
// the parameters and follow shadow <- d shadow + (1 - d) theta.
class Ema {
 public:
  Ema(std::span<Param* const> params, double decay);

  void update(std::span<Param* const> params);

  double decay() const { return decay_; }
  std::uint64_t updates() const { return updates_; }
  const std::vector<Tensor>& shadows() const { return shadows_; }
  std::vector<Tensor>& shadows() { return shadows_; }

 private:
  double decay_;
  std::vector<Tensor> shadows_;
  std::uint64_t updates_ = 0;
};

// Copies values between parameters and a matching list of tensors.
std::vector<Tensor> snapshot(std::span<Param* const> params);
void load_values(std::span<Param* const> params, const std::vector<Tensor>& values);

}  // namespace emi::optim
