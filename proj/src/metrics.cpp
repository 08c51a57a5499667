#include "emi/metrics.hpp"

#include <cmath>
#include <limits>
#include <vector>

#include "json.hpp"

namespace emi {

PearsonResult pearson(std::span<const double> x, std::span<const double> y, double eps) {
  if (x.size() != y.size()) {
    throw DimensionError("pearson: length mismatch " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  if (x.size() < 2) throw DimensionError("pearson: need at least two points");
  double mean_x = 0.0, mean_y = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double k = static_cast<double>(i + 1);
    const double dx = x[i] - mean_x;
    const double dy = y[i] - mean_y;
    mean_x += dx / k;
    mean_y += dy / k;
    // (k-1)/k dx dy == dx (y - new mean_y)
    sxx += dx * (x[i] - mean_x);
    syy += dy * (y[i] - mean_y);
    sxy += dx * (y[i] - mean_y);
  }
  const double n = static_cast<double>(x.size());
  if (sxx / n < eps || syy / n < eps) return {0.0, true};
  double r = sxy / std::sqrt(sxx * syy);
  if (r > 1.0) r = 1.0;
  if (r < -1.0) r = -1.0;
  return {r, false};
}

EvalReport mean_pcc(const Tensor& predictions, const Tensor& targets) {
  require_same_shape(predictions, targets, "mean_pcc");
  if (predictions.rank() != 2 || predictions.dim(1) != kNumTargets) {
    throw DimensionError("mean_pcc: expected [N x 6], got " + shape_to_string(predictions.shape()));
  }
  const std::size_t n = predictions.dim(0);
  if (n < 2) throw DimensionError("mean_pcc: need at least two samples");
  EvalReport report;
  report.n = n;
  std::vector<double> x(n), y(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < kNumTargets; ++i) {
    for (std::size_t r = 0; r < n; ++r) {
      x[r] = predictions.at(r, i);
      y[r] = targets.at(r, i);
    }
    const PearsonResult pr = pearson(x, y);
    report.p[i] = pr.value;
    report.degenerate[i] = pr.degenerate;
    sum += pr.value;
  }
  report.p_mean = sum / static_cast<double>(kNumTargets);
  return report;
}

std::string to_json(const EvalReport& report) {
  nlohmann::json j;
  j["p"] = report.p;
  j["p_mean"] = report.p_mean;
  j["n"] = report.n;
  std::vector<std::size_t> degenerate;
  for (std::size_t i = 0; i < kNumTargets; ++i) {
    if (report.degenerate[i]) degenerate.push_back(i);
  }
  j["degenerate_dims"] = degenerate;
  return j.dump();
}

EarlyStopTracker::EarlyStopTracker(std::size_t patience) : patience_(patience) {
  if (patience == 0) throw ConfigError("early-stopping patience must be at least 1");
  best_ = -std::numeric_limits<double>::infinity();
}

EarlyStopTracker::Decision EarlyStopTracker::observe(double metric) {
  ++epochs_;
  if (metric > best_) {
    best_ = metric;
    best_epoch_ = epochs_;
  }
  return epochs_since_best() >= patience_ ? Decision::stop : Decision::proceed;
}

}  // namespace emi
