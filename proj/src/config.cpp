#include "emi/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace emi {

using nlohmann::ordered_json;

Cadence parse_cadence(const std::string& s) {
  if (s == "step") return Cadence::step;
  if (s == "epoch") return Cadence::epoch;
  throw ConfigError("unknown cadence '" + s + "' (expected step|epoch)");
}

const char* to_string(Cadence c) { return c == Cadence::step ? "step" : "epoch"; }

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (align_length == 0) throw ConfigError("align_length must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (patience == 0) throw ConfigError("patience must be positive");
  if (!(lr > 0.0) || !(lr_min >= 0.0) || lr_min > lr) throw ConfigError("need 0 <= lr_min <= lr, lr > 0");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) throw ConfigError("ema_decay must lie in [0, 1]");
  if (!(adamw.weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  if (!(loss.corr_eps > 0.0)) throw ConfigError("corr_eps must be positive");
}

namespace {

ordered_json to_ordered(const TrainConfig& c) {
  ordered_json j;
  j["manifest"] = c.manifest;
  j["run_dir"] = c.run_dir;
  j["dim_visual"] = c.model.feature_dims[0];
  j["dim_audio"] = c.model.feature_dims[1];
  j["dim_text"] = c.model.feature_dims[2];
  j["hidden_dim"] = c.model.hidden;
  j["head_dim"] = c.model.head_hidden;
  j["dropout"] = c.model.dropout;
  j["fusion"] = to_string(c.model.fusion);
  j["use_vad"] = c.model.use_vad;
  j["activation"] = to_string(c.model.activation);
  j["output_sigmoid"] = c.model.output_sigmoid;
  j["align_length"] = c.align_length;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["lr_min"] = c.lr_min;
  j["lr_schedule"] = to_string(c.lr_schedule);
  j["beta1"] = c.adamw.beta1;
  j["beta2"] = c.adamw.beta2;
  j["adam_eps"] = c.adamw.eps;
  j["weight_decay"] = c.adamw.weight_decay;
  j["epochs"] = c.epochs;
  j["patience"] = c.patience;
  j["clip_norm"] = c.clip_norm;
  j["ema_decay"] = c.ema_decay;
  j["ema_cadence"] = to_string(c.ema_cadence);
  j["objective"] = to_string(c.loss.objective);
  j["corr_mode"] = to_string(c.loss.corr_mode);
  j["corr_eps"] = c.loss.corr_eps;
  j["lambda_corr"] = c.weights.corr;
  j["lambda_aux"] = c.weights.aux;
  j["lambda_vad"] = c.weights.vad;
  j["lambda_visual"] = c.weights.visual;
  j["lambda_audio"] = c.weights.audio;
  j["lambda_text"] = c.weights.text;
  j["seed"] = c.seed;
  return j;
}

template <typename T>
T get(const ordered_json& v, const std::string& key) {
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::size_t get_count(const ordered_json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    throw ConfigError("config key '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

}  // namespace

std::string to_json(const TrainConfig& config, int indent) { return to_ordered(config).dump(indent); }

TrainConfig config_from_json(const std::string& json_text, const TrainConfig& base) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  TrainConfig c = base;
  using Setter = std::function<void(const ordered_json&, const std::string&)>;
  const std::vector<std::pair<std::string, Setter>> setters = {
      {"manifest", [&](auto& v, auto& k) { c.manifest = get<std::string>(v, k); }},
      {"run_dir", [&](auto& v, auto& k) { c.run_dir = get<std::string>(v, k); }},
      {"dim_visual", [&](auto& v, auto& k) { c.model.feature_dims[0] = get_count(v, k); }},
      {"dim_audio", [&](auto& v, auto& k) { c.model.feature_dims[1] = get_count(v, k); }},
      {"dim_text", [&](auto& v, auto& k) { c.model.feature_dims[2] = get_count(v, k); }},
      {"hidden_dim", [&](auto& v, auto& k) { c.model.hidden = get_count(v, k); }},
      {"head_dim", [&](auto& v, auto& k) { c.model.head_hidden = get_count(v, k); }},
      {"dropout", [&](auto& v, auto& k) { c.model.dropout = get<double>(v, k); }},
      {"fusion", [&](auto& v, auto& k) { c.model.fusion = parse_fusion(get<std::string>(v, k)); }},
      {"use_vad", [&](auto& v, auto& k) { c.model.use_vad = get<bool>(v, k); }},
      {"activation", [&](auto& v, auto& k) { c.model.activation = parse_activation(get<std::string>(v, k)); }},
      {"output_sigmoid", [&](auto& v, auto& k) { c.model.output_sigmoid = get<bool>(v, k); }},
      {"align_length", [&](auto& v, auto& k) { c.align_length = get_count(v, k); }},
      {"batch_size", [&](auto& v, auto& k) { c.batch_size = get_count(v, k); }},
      {"lr", [&](auto& v, auto& k) { c.lr = get<double>(v, k); }},
      {"lr_min", [&](auto& v, auto& k) { c.lr_min = get<double>(v, k); }},
      {"lr_schedule", [&](auto& v, auto& k) { c.lr_schedule = parse_cadence(get<std::string>(v, k)); }},
      {"beta1", [&](auto& v, auto& k) { c.adamw.beta1 = get<double>(v, k); }},
      {"beta2", [&](auto& v, auto& k) { c.adamw.beta2 = get<double>(v, k); }},
      {"adam_eps", [&](auto& v, auto& k) { c.adamw.eps = get<double>(v, k); }},
      {"weight_decay", [&](auto& v, auto& k) { c.adamw.weight_decay = get<double>(v, k); }},
      {"epochs", [&](auto& v, auto& k) { c.epochs = get_count(v, k); }},
      {"patience", [&](auto& v, auto& k) { c.patience = get_count(v, k); }},
      {"clip_norm", [&](auto& v, auto& k) { c.clip_norm = get<double>(v, k); }},
      {"ema_decay", [&](auto& v, auto& k) { c.ema_decay = get<double>(v, k); }},
      {"ema_cadence", [&](auto& v, auto& k) { c.ema_cadence = parse_cadence(get<std::string>(v, k)); }},
      {"objective", [&](auto& v, auto& k) { c.loss.objective = parse_objective(get<std::string>(v, k)); }},
      {"corr_mode", [&](auto& v, auto& k) { c.loss.corr_mode = parse_corr_mode(get<std::string>(v, k)); }},
      {"corr_eps", [&](auto& v, auto& k) { c.loss.corr_eps = get<double>(v, k); }},
      {"lambda_corr", [&](auto& v, auto& k) { c.weights.corr = get<double>(v, k); }},
      {"lambda_aux", [&](auto& v, auto& k) { c.weights.aux = get<double>(v, k); }},
      {"lambda_vad", [&](auto& v, auto& k) { c.weights.vad = get<double>(v, k); }},
      {"lambda_visual", [&](auto& v, auto& k) { c.weights.visual = get<double>(v, k); }},
      {"lambda_audio", [&](auto& v, auto& k) { c.weights.audio = get<double>(v, k); }},
      {"lambda_text", [&](auto& v, auto& k) { c.weights.text = get<double>(v, k); }},
      {"seed", [&](auto& v, auto& k) { c.seed = get<std::uint64_t>(v, k); }},
  };
  for (const auto& [key, value] : j.items()) {
    auto it = std::find_if(setters.begin(), setters.end(), [&](const auto& s) { return s.first == key; });
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value, key);
  }
  return c;
}

TrainConfig load_config(const std::filesystem::path& path, const TrainConfig& base) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

std::string config_hash(const TrainConfig& config) {
  // The output location does not change what a run computes.
  TrainConfig canonical = config;
  canonical.run_dir.clear();
  const std::size_t h = std::hash<std::string>{}(to_json(canonical));
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << h;
  return out.str();
}

}  // namespace emi
