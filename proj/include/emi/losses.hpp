#pragma once

#include <array>

#include "emi/model.hpp"

namespace emi {

struct LossWeights {
  double corr = 0.5;
  double aux = 0.3;
  double vad = 0.1;
  double visual = 1.0;
  double audio = 1.0;
  double text = 1.0;

  void validate() const;
  std::array<double, kNumModalities> branch() const { return {visual, audio, text}; }
};

// How the batch correlation term treats the six target columns.
enum class CorrMode { per_dim, flattened };
// `mse` skips every auxiliary objective; `multi` evaluates all four terms.
enum class Objective { mse, multi };

CorrMode parse_corr_mode(const std::string& s);
const char* to_string(CorrMode mode);
Objective parse_objective(const std::string& s);
const char* to_string(Objective o);

struct LossOptions {
  Objective objective = Objective::multi;
  CorrMode corr_mode = CorrMode::per_dim;
  double corr_eps = 1e-8;
};

struct LossValue {
  double value = 0.0;
  Tensor grad;
};

struct LossBreakdown {
  double mse = 0.0;
  double corr = 0.0;
  double aux = 0.0;
  std::array<double, kNumModalities> aux_branch{0.0, 0.0, 0.0};
  double vad = 0.0;
  double total = 0.0;
  bool corr_skipped = false;  // batch of one: correlation undefined
};

// Mean over the batch of the per-sample mean squared error over 6 targets.
LossValue mse_loss(const Tensor& prediction, const Tensor& target);

// 1 - mean over target columns of the batch Pearson correlation. Columns
// whose prediction or target variance falls below eps score 0 (and carry
// no gradient). Requires at least two rows.
LossValue pearson_loss(const Tensor& prediction, const Tensor& target, double eps = 1e-8,
                       CorrMode mode = CorrMode::per_dim);

struct AuxLoss {
  double value = 0.0;
  std::array<double, kNumModalities> branch{0.0, 0.0, 0.0};
  std::array<Tensor, kNumModalities> grads;  // d value / d aux prediction
};
AuxLoss aux_loss(const std::array<Tensor, kNumModalities>& aux_predictions, const Tensor& target,
                 const LossWeights& weights);

// Mean over the batch of ||v - 0.5||^2.
LossValue vad_reg_loss(const Tensor& vad);

struct TotalLoss {
  LossBreakdown breakdown;
  OutputGrads grads;
};
TotalLoss total_loss(const ForwardOutputs& outputs, const Tensor& target, const LossWeights& weights,
                     const LossOptions& options = {});

}  // namespace emi
