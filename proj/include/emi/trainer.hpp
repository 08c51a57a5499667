#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emi/checkpoint.hpp"
#include "emi/config.hpp"
#include "emi/data.hpp"
#include "emi/metrics.hpp"

namespace emi {

struct StepLog {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 1-based, global
  double lr = 0.0;
  LossBreakdown loss;
  double grad_norm = 0.0;    // before clipping
  double clip_factor = 1.0;  // < 1 iff clipping fired
};

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  EvalReport ema;  // validation, EMA weights (drives early stopping)
  EvalReport raw;  // validation, raw weights
};

struct RunRecord {
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
  double best_p_mean = 0.0;
  std::string stop_reason;  // "early_stop" | "max_epochs"
  std::string config_hash;
};

struct TrainData {
  data::SplitData train;
  data::SplitData val;
};

TrainData load_train_data(const TrainConfig& config);

struct TrainOptions {
  bool write_run_dir = true;
  std::ostream* progress = nullptr;  // one line per epoch when set
};

// Full training recipe: forward, loss, backward, clip, AdamW, EMA per step;
// cosine schedule, EMA validation and early stopping per epoch. Writes
// config.json, log.jsonl, best.emic and last.emic into config.run_dir.
// On a non-finite loss the run aborts with NumericError and the last
// completed epoch's last.emic is left in place.
RunRecord train(const TrainConfig& config, const TrainData* preloaded = nullptr, const TrainOptions& options = {});

struct Predictions {
  std::vector<std::string> ids;
  Tensor values;  // [N x 6]
  Tensor targets;  // [N x 6]
  std::vector<bool> labeled;
};

// Eval-mode forward over `split` in manifest order. With `logits`, returns
// the main head's pre-activation outputs instead of predictions.
Predictions predict(EmotionModel& model, const data::SplitData& split, std::size_t batch_size, bool logits = false);

// mean_pcc over the labeled rows of `split`.
EvalReport evaluate(EmotionModel& model, const data::SplitData& split, std::size_t batch_size);

// Builds a model matching `config` and loads the chosen weight set.
EmotionModel load_model(const TrainConfig& config, const std::filesystem::path& checkpoint,
                        checkpoint::Weights which);

EvalReport evaluate_checkpoint(const TrainConfig& config, const std::filesystem::path& checkpoint,
                               data::Split split, bool use_ema);

// JSONL line encoders used for log.jsonl.
std::string to_json(const StepLog& step);
std::string to_json(const EpochLog& epoch);

// ---------------------------------------------------------------------------
// Ablation grid: {average, concat} x {mse, multi} x {no VAD, VAD}
// ---------------------------------------------------------------------------

struct AblationCell {
  FusionMode fusion = FusionMode::concat;
  Objective objective = Objective::multi;
  bool vad = true;
  std::string name() const;
};

// Grid in reporting order: the incremental path first (baseline average,
// baseline concat, + multi-objective, + VAD), then the remaining four
// combinations.
std::vector<AblationCell> ablation_grid();
TrainConfig apply_cell(const TrainConfig& base, const AblationCell& cell);

struct AblationResult {
  AblationCell cell;
  std::vector<double> p_means;  // one per seed
  double p_mean = 0.0;          // mean over seeds
  double p_std = 0.0;           // population spread over seeds
  std::size_t best_epoch = 0;   // of the first seed
  std::string status = "ok";    // "ok" or "failed: <reason>"
};

// Runs every cell with shared seeds (seed, seed+1, ...) under
// base.run_dir/<cell>/, writes base.run_dir/ablation.csv.
std::vector<AblationResult> ablate(const TrainConfig& base, std::size_t seeds = 1,
                                   const TrainOptions& options = {});
std::string ablation_csv(const std::vector<AblationResult>& results);

}  // namespace emi
