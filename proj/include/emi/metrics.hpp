#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "emi/model.hpp"

namespace emi {

struct PearsonResult {
  double value = 0.0;
  bool degenerate = false;  // a variance fell below eps; value forced to 0
};

// Population Pearson correlation, computed in one deterministic pass with
// running co-moments. Throws DimensionError for fewer than two points.
PearsonResult pearson(std::span<const double> x, std::span<const double> y, double eps = 1e-12);

struct EvalReport {
  std::array<double, kNumTargets> p{};
  double p_mean = 0.0;
  std::size_t n = 0;
  std::array<bool, kNumTargets> degenerate{};
};

// Per-column Pearson correlation of [N x 6] predictions against targets and
// their arithmetic mean.
EvalReport mean_pcc(const Tensor& predictions, const Tensor& targets);

// {"p": [...], "p_mean": ..., "n": ..., "degenerate_dims": [...]}, one line.
std::string to_json(const EvalReport& report);

// Patience-based stopping on a metric that should increase. Epochs are
// numbered from 1 in the order they are observed.
class EarlyStopTracker {
 public:
  enum class Decision { proceed, stop };

  explicit EarlyStopTracker(std::size_t patience);

  Decision observe(double metric);

  std::size_t best_epoch() const { return best_epoch_; }
  double best_metric() const { return best_; }
  std::size_t epochs_seen() const { return epochs_; }
  std::size_t epochs_since_best() const { return epochs_ - best_epoch_; }

 private:
  std::size_t patience_;
  std::size_t epochs_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = 0.0;
};

}  // namespace emi
