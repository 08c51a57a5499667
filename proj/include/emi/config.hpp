#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "emi/losses.hpp"
#include "emi/model.hpp"
#include "emi/optim.hpp"

namespace emi {

enum class Cadence { step, epoch };
Cadence parse_cadence(const std::string& s);
const char* to_string(Cadence c);

// Every knob of a run. Serialized as flat JSON; a run is fully determined by
// its TrainConfig plus the dataset.
struct TrainConfig {
  std::string manifest;
  std::string run_dir = "runs/default";

  ModelConfig model;  // feature dims have no defaults and must be provided
  std::size_t align_length = 128;
  std::size_t batch_size = 32;

  double lr = 1e-4;
  double lr_min = 0.0;
  Cadence lr_schedule = Cadence::epoch;
  optim::AdamWConfig adamw{0.9, 0.999, 1e-8, 1e-4};
  std::size_t epochs = 30;
  std::size_t patience = 8;
  double clip_norm = 1.0;
  double ema_decay = 0.999;
  Cadence ema_cadence = Cadence::step;

  LossWeights weights;
  LossOptions loss;

  std::uint64_t seed = 0;

  void validate() const;
};

std::string to_json(const TrainConfig& config, int indent = -1);
// Starts from `base` and overrides every key present in `json_text`;
// unknown keys are rejected.
TrainConfig config_from_json(const std::string& json_text, const TrainConfig& base = {});
TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base = {});
// Hex digest of the JSON serialization, run_dir excluded.
std::string config_hash(const TrainConfig& config);

}  // namespace emi
