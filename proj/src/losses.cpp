#include "emi/losses.hpp"

#include <cmath>
#include <vector>

namespace emi {

void LossWeights::validate() const {
  for (double w : {corr, aux, vad, visual, audio, text}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("loss weights must be finite and non-negative");
  }
}

CorrMode parse_corr_mode(const std::string& s) {
  if (s == "per_dim") return CorrMode::per_dim;
  if (s == "flattened") return CorrMode::flattened;
  throw ConfigError("unknown correlation mode '" + s + "' (expected per_dim|flattened)");
}

const char* to_string(CorrMode mode) { return mode == CorrMode::per_dim ? "per_dim" : "flattened"; }

Objective parse_objective(const std::string& s) {
  if (s == "mse") return Objective::mse;
  if (s == "multi") return Objective::multi;
  throw ConfigError("unknown objective '" + s + "' (expected mse|multi)");
}

const char* to_string(Objective o) { return o == Objective::mse ? "mse" : "multi"; }

namespace {

void require_matrix(const Tensor& prediction, const Tensor& target, std::size_t cols, const char* op) {
  require_same_shape(prediction, target, op);
  if (prediction.rank() != 2 || prediction.dim(1) != cols) {
    throw DimensionError(std::string(op) + ": expected [B x " + std::to_string(cols) + "], got " +
                         shape_to_string(prediction.shape()));
  }
}

// Pearson correlation of x against y plus d r / d x. Degenerate inputs give
// r = 0 with a zero gradient.
double correlation_with_grad(const std::vector<double>& x, const std::vector<double>& y, double eps,
                             std::vector<double>& dr_dx) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    mx += x[k];
    my += y[k];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double cx = x[k] - mx, cy = y[k] - my;
    sxx += cx * cx;
    syy += cy * cy;
    sxy += cx * cy;
  }
  dr_dx.assign(n, 0.0);
  const double nn = static_cast<double>(n);
  if (sxx / nn < eps || syy / nn < eps) return 0.0;
  const double denom = std::sqrt(sxx * syy);
  const double r = sxy / denom;
  for (std::size_t k = 0; k < n; ++k) {
    dr_dx[k] = (y[k] - my) / denom - r * (x[k] - mx) / sxx;
  }
  return r;
}

}  // namespace

LossValue mse_loss(const Tensor& prediction, const Tensor& target) {
  require_matrix(prediction, target, kNumTargets, "mse_loss");
  const std::size_t rows = prediction.dim(0);
  const double count = static_cast<double>(kNumTargets * rows);
  LossValue out{0.0, Tensor(prediction.shape())};
  double batch_sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sample = 0.0;
    for (std::size_t i = 0; i < kNumTargets; ++i) {
      const double e = prediction.at(r, i) - target.at(r, i);
      sample += e * e;
      out.grad.at(r, i) = 2.0 * e / count;
    }
    batch_sum += sample / static_cast<double>(kNumTargets);
  }
  out.value = batch_sum / static_cast<double>(rows);
  return out;
}

LossValue pearson_loss(const Tensor& prediction, const Tensor& target, double eps, CorrMode mode) {
  require_matrix(prediction, target, kNumTargets, "pearson_loss");
  const std::size_t rows = prediction.dim(0);
  if (rows < 2) throw DimensionError("pearson_loss: batch size must be at least 2, got " + std::to_string(rows));
  LossValue out{0.0, Tensor(prediction.shape())};
  std::vector<double> dr;

  if (mode == CorrMode::flattened) {
    const double r = correlation_with_grad(prediction.values(), target.values(), eps, dr);
    out.value = 1.0 - r;
    for (std::size_t k = 0; k < dr.size(); ++k) out.grad[k] = -dr[k];
    return out;
  }

  std::vector<double> x(rows), y(rows);
  double sum_r = 0.0;
  for (std::size_t i = 0; i < kNumTargets; ++i) {
    for (std::size_t r = 0; r < rows; ++r) {
      x[r] = prediction.at(r, i);
      y[r] = target.at(r, i);
    }
    sum_r += correlation_with_grad(x, y, eps, dr);
    for (std::size_t r = 0; r < rows; ++r) out.grad.at(r, i) = -dr[r] / static_cast<double>(kNumTargets);
  }
  out.value = 1.0 - sum_r / static_cast<double>(kNumTargets);
  return out;
}

AuxLoss aux_loss(const std::array<Tensor, kNumModalities>& aux_predictions, const Tensor& target,
                 const LossWeights& weights) {
  AuxLoss out;
  const auto lambda = weights.branch();
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    LossValue l = mse_loss(aux_predictions[m], target);
    out.branch[m] = l.value;
    out.value += lambda[m] * l.value;
    out.grads[m] = ops::scale(l.grad, lambda[m]);
  }
  return out;
}

LossValue vad_reg_loss(const Tensor& vad) {
  if (vad.rank() != 2 || vad.dim(1) != kNumVad) {
    throw DimensionError("vad_reg_loss: expected [B x 3], got " + shape_to_string(vad.shape()));
  }
  const std::size_t rows = vad.dim(0);
  const double n = static_cast<double>(rows);
  LossValue out{0.0, Tensor(vad.shape())};
  double sum = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double sample = 0.0;
    for (std::size_t i = 0; i < kNumVad; ++i) {
      const double d = vad.at(r, i) - 0.5;
      sample += d * d;
      out.grad.at(r, i) = 2.0 * d / n;
    }
    sum += sample;
  }
  out.value = sum / n;
  return out;
}

TotalLoss total_loss(const ForwardOutputs& outputs, const Tensor& target, const LossWeights& weights,
                     const LossOptions& options) {
  TotalLoss out;
  LossBreakdown& b = out.breakdown;
  LossValue mse = mse_loss(outputs.prediction, target);
  b.mse = mse.value;
  out.grads.prediction = std::move(mse.grad);

  if (options.objective == Objective::mse) {
    for (std::size_t m = 0; m < kNumModalities; ++m) out.grads.aux[m] = Tensor(outputs.aux[m].shape());
    b.total = b.mse;
    if (!std::isfinite(b.total)) throw NumericError("total loss is not finite");
    return out;
  }

  if (outputs.prediction.dim(0) >= 2) {
    LossValue corr = pearson_loss(outputs.prediction, target, options.corr_eps, options.corr_mode);
    b.corr = corr.value;
    ops::accumulate(out.grads.prediction, ops::scale(corr.grad, weights.corr));
  } else {
    b.corr_skipped = true;
  }

  AuxLoss aux = aux_loss(outputs.aux, target, weights);
  b.aux = aux.value;
  b.aux_branch = aux.branch;
  for (std::size_t m = 0; m < kNumModalities; ++m) out.grads.aux[m] = ops::scale(aux.grads[m], weights.aux);

  if (!outputs.vad.empty()) {
    LossValue vad = vad_reg_loss(outputs.vad);
    b.vad = vad.value;
    out.grads.vad = ops::scale(vad.grad, weights.vad);
  }

  b.total = b.mse + weights.corr * b.corr + weights.aux * b.aux + weights.vad * b.vad;
  if (!std::isfinite(b.total)) throw NumericError("total loss is not finite");
  return out;
}

}  // namespace emi
