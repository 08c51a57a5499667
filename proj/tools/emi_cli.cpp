// emi: command-line front end for training and evaluating the emotion
// mimicry intensity regressor.

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "emi/checkpoint.hpp"
#include "emi/config.hpp"
#include "emi/data.hpp"
#include "emi/kernels.hpp"
#include "emi/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace emi;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

std::array<std::size_t, kNumModalities> parse_dims(const std::string& s) {
  std::array<std::size_t, kNumModalities> dims{};
  std::size_t pos = 0;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::size_t end = m + 1 < kNumModalities ? s.find(':', pos) : s.size();
    if (end == std::string::npos) throw ConfigError("dims must look like V:A:T, got '" + s + "'");
    const char* first = s.data() + pos;
    const char* last = s.data() + end;
    auto [ptr, ec] = std::from_chars(first, last, dims[m]);
    if (ec != std::errc() || ptr != last || dims[m] == 0) {
      throw ConfigError("dims must be three positive integers V:A:T, got '" + s + "'");
    }
    pos = end + 1;
  }
  return dims;
}

std::string format_dims(const std::array<std::size_t, kNumModalities>& d) {
  return std::to_string(d[0]) + ":" + std::to_string(d[1]) + ":" + std::to_string(d[2]);
}

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

// Training flags bind to a defaults struct so --help prints the defaults;
// after parsing, only flags given on the command line override the config
// file (or the defaults when there is no file).
struct TrainFlags {
  TrainConfig d;
  std::string config_path;
  std::string dims;
  std::string fusion = to_string(d.model.fusion);
  std::string activation = to_string(d.model.activation);
  std::string objective = to_string(d.loss.objective);
  std::string corr_mode = to_string(d.loss.corr_mode);
  std::string lr_schedule = to_string(d.lr_schedule);
  std::string ema_cadence = to_string(d.ema_cadence);
  bool no_vad = false;
  std::vector<std::pair<CLI::Option*, std::function<void(TrainConfig&)>>> appliers;

  template <typename T>
  void add(CLI::App* app, const std::string& name, T& var, const std::string& help, std::function<void(TrainConfig&)> f) {
    CLI::Option* opt = app->add_option(name, var, help)->capture_default_str();
    appliers.emplace_back(opt, std::move(f));
  }

  void attach(CLI::App* app, bool with_manifest = true) {
    app->add_option("--config", config_path, "JSON config file (flat keys); flags override it");
    if (with_manifest) add(app, "--manifest", d.manifest, "manifest CSV", [this](auto& c) { c.manifest = d.manifest; });
    add(app, "--run-dir", d.run_dir, "run directory (relative paths resolve under $EMI_RUN_ROOT when set)",
        [this](auto& c) { c.run_dir = d.run_dir; });
    add(app, "--dims", dims, "feature dims V:A:T", [this](auto& c) { c.model.feature_dims = parse_dims(dims); });
    add(app, "--hidden", d.model.hidden, "hidden/fused dimension", [this](auto& c) { c.model.hidden = d.model.hidden; });
    add(app, "--head-hidden", d.model.head_hidden, "fusion head hidden width (0: same as --hidden)",
        [this](auto& c) { c.model.head_hidden = d.model.head_hidden; });
    add(app, "--dropout", d.model.dropout, "dropout rate", [this](auto& c) { c.model.dropout = d.model.dropout; });
    add(app, "--fusion", fusion, "concat|average", [this](auto& c) { c.model.fusion = parse_fusion(fusion); });
    add(app, "--activation", activation, "head activation relu|identity",
        [this](auto& c) { c.model.activation = parse_activation(activation); });
    auto* nv = app->add_flag("--no-vad", no_vad, "disable the VAD pathway");
    appliers.emplace_back(nv, [](auto& c) { c.model.use_vad = false; });
    add(app, "--align", d.align_length, "aligned sequence length", [this](auto& c) { c.align_length = d.align_length; });
    add(app, "--batch-size", d.batch_size, "batch size", [this](auto& c) { c.batch_size = d.batch_size; });
    add(app, "--lr", d.lr, "initial learning rate", [this](auto& c) { c.lr = d.lr; });
    appliers.back().first->default_str("1e-4");
    add(app, "--lr-min", d.lr_min, "final cosine learning rate", [this](auto& c) { c.lr_min = d.lr_min; });
    add(app, "--lr-schedule", lr_schedule, "cosine step cadence epoch|step",
        [this](auto& c) { c.lr_schedule = parse_cadence(lr_schedule); });
    add(app, "--weight-decay", d.adamw.weight_decay, "AdamW decoupled weight decay",
        [this](auto& c) { c.adamw.weight_decay = d.adamw.weight_decay; });
    appliers.back().first->default_str("1e-4");
    add(app, "--epochs", d.epochs, "maximum epochs", [this](auto& c) { c.epochs = d.epochs; });
    add(app, "--patience", d.patience, "early-stopping patience (epochs)", [this](auto& c) { c.patience = d.patience; });
    add(app, "--clip", d.clip_norm, "global gradient norm limit", [this](auto& c) { c.clip_norm = d.clip_norm; });
    appliers.back().first->default_str("1.0");
    add(app, "--ema", d.ema_decay, "EMA decay", [this](auto& c) { c.ema_decay = d.ema_decay; });
    add(app, "--ema-cadence", ema_cadence, "EMA update cadence step|epoch",
        [this](auto& c) { c.ema_cadence = parse_cadence(ema_cadence); });
    add(app, "--objective", objective, "mse|multi", [this](auto& c) { c.loss.objective = parse_objective(objective); });
    add(app, "--corr-mode", corr_mode, "per_dim|flattened",
        [this](auto& c) { c.loss.corr_mode = parse_corr_mode(corr_mode); });
    add(app, "--lambda-corr", d.weights.corr, "correlation loss weight", [this](auto& c) { c.weights.corr = d.weights.corr; });
    add(app, "--lambda-aux", d.weights.aux, "auxiliary loss weight", [this](auto& c) { c.weights.aux = d.weights.aux; });
    add(app, "--lambda-vad", d.weights.vad, "VAD regularizer weight", [this](auto& c) { c.weights.vad = d.weights.vad; });
    add(app, "--seed", d.seed, "random seed", [this](auto& c) { c.seed = d.seed; });
  }

  TrainConfig resolve() const {
    TrainConfig c = config_path.empty() ? TrainConfig{} : load_config(config_path);
    for (const auto& [opt, apply] : appliers) {
      if (opt->count() > 0) apply(c);
    }
    if (const char* root = std::getenv("EMI_RUN_ROOT"); root && *root && fs::path(c.run_dir).is_relative()) {
      c.run_dir = (fs::path(root) / c.run_dir).string();
    }
    return c;
  }
};

void echo_config(const TrainConfig& c) { std::cerr << to_json(c, 2) << "\n"; }

// Architecture for a checkpoint: explicit --config, else config.json beside it.
TrainConfig checkpoint_config(const std::string& ckpt, const std::string& config_path, const std::string& manifest) {
  fs::path path = config_path.empty() ? fs::path(ckpt).parent_path() / "config.json" : fs::path(config_path);
  if (!fs::exists(path)) throw DataError("no config for checkpoint: " + path.string() + " (pass --config)");
  TrainConfig c = load_config(path);
  if (!manifest.empty()) c.manifest = manifest;
  return c;
}

int run_inspect_ckpt(const std::string& ckpt) {
  const auto records = checkpoint::read(ckpt);
  std::size_t total = 0;
  for (const auto& r : records) {
    std::cout << r.name << " " << shape_to_string(r.value.shape()) << "\n";
    total += r.value.size();
  }
  const std::size_t raw = checkpoint::raw_parameter_count(records);
  std::cout << "records " << records.size() << ", scalars " << total << ", parameters " << raw << "\n";
  const fs::path cfg = fs::path(ckpt).parent_path() / "config.json";
  if (fs::exists(cfg)) {
    const std::size_t expected = parameter_count(load_config(cfg).model);
    std::cout << "analytic parameter count " << expected << (expected == raw ? " (match)" : " (MISMATCH)") << "\n";
  }
  return kOk;
}

int run_inspect_emif(const std::string& file) {
  data::EmifInfo info;
  const data::Sample s = data::read_feature_file(file, &info);
  (void)s;
  std::cout << "magic EMIF\nversion " << info.version << "\nsize " << info.size << " bytes\n";
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const auto& b = info.blocks[m];
    std::cout << kModalityNames[m] << ": ";
    if (b.present) {
      std::cout << b.rows << " x " << b.dim;
    } else {
      std::cout << "absent";
    }
    std::cout << " (block at offset " << b.offset << ")\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal emotion mimicry intensity regressor"};
  app.require_subcommand(1);
  std::string kernels_name;
  app.add_option("--kernels", kernels_name, "force a kernel set (scalar|avx2); default picks the fastest available");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "write a synthetic dataset (EMIF files + manifest)");
  data::SynthSpec spec;
  std::string gen_dims = format_dims(spec.dims), gen_mode = to_string(spec.mode), gen_out;
  gen->add_option("--n", spec.n, "number of samples")->capture_default_str();
  gen->add_option("--dims", gen_dims, "feature dims V:A:T")->capture_default_str();
  gen->add_option("--seed", spec.seed, "generator seed")->capture_default_str();
  gen->add_option("--noise", spec.noise, "target noise sigma")->capture_default_str();
  gen->add_option("--mode", gen_mode, "overlap|disjoint")->capture_default_str();
  gen->add_option("--missing-rate", spec.missing_rate, "fraction of samples with absent modalities")
      ->capture_default_str();
  gen->add_option("--min-len", spec.min_length, "shortest sequence")->capture_default_str();
  gen->add_option("--max-len", spec.max_length, "longest sequence")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train one model into a run directory");
  TrainFlags train_flags;
  train_flags.attach(train_cmd);
  bool quiet = false;
  train_cmd->add_flag("--quiet", quiet, "no per-epoch progress");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a split (JSON to stdout)");
  std::string eval_ckpt, eval_config, eval_manifest, eval_split = "val";
  bool eval_no_ema = false, eval_both = false;
  eval_cmd->add_option("--ckpt", eval_ckpt, "checkpoint (.emic)")->required();
  eval_cmd->add_option("--config", eval_config, "run config (default: config.json beside the checkpoint)");
  eval_cmd->add_option("--manifest", eval_manifest, "manifest override");
  eval_cmd->add_option("--split", eval_split, "train|val|test")->capture_default_str();
  eval_cmd->add_flag("--no-ema", eval_no_ema, "use raw weights instead of EMA shadows");
  eval_cmd->add_flag("--both", eval_both, "emit EMA and raw reports side by side");

  // predict
  auto* pred_cmd = app.add_subcommand("predict", "write per-sample predictions as CSV");
  std::string pred_ckpt, pred_config, pred_manifest, pred_split = "test", pred_out;
  bool pred_raw = false, pred_no_ema = false;
  pred_cmd->add_option("--ckpt", pred_ckpt, "checkpoint (.emic)")->required();
  pred_cmd->add_option("--config", pred_config, "run config (default: config.json beside the checkpoint)");
  pred_cmd->add_option("--manifest", pred_manifest, "manifest override");
  pred_cmd->add_option("--split", pred_split, "train|val|test")->capture_default_str();
  pred_cmd->add_option("--out", pred_out, "output CSV (default: stdout)");
  pred_cmd->add_flag("--raw", pred_raw, "emit pre-sigmoid logits");
  pred_cmd->add_flag("--no-ema", pred_no_ema, "use raw weights instead of EMA shadows");

  // ablate
  auto* abl_cmd = app.add_subcommand("ablate", "run the fusion x objective x VAD grid, write ablation.csv");
  TrainFlags abl_flags;
  abl_flags.attach(abl_cmd);
  std::string grid = "default";
  std::size_t seeds = 1;
  abl_cmd->add_option("--grid", grid, "grid to run (only 'default')")->capture_default_str();
  abl_cmd->add_option("--seeds", seeds, "seeds per cell (seed, seed+1, ...)")->capture_default_str();

  // inspect
  auto* insp_cmd = app.add_subcommand("inspect", "dump a checkpoint or feature file header");
  std::string insp_ckpt, insp_emif;
  auto* o_ckpt = insp_cmd->add_option("--ckpt", insp_ckpt, "checkpoint (.emic)");
  auto* o_emif = insp_cmd->add_option("--emif", insp_emif, "feature file (.emif)");
  o_ckpt->excludes(o_emif);
  insp_cmd->require_option(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (!kernels_name.empty() && !kernels::select(kernels_name)) {
      throw ConfigError("kernel set '" + kernels_name + "' is not available on this machine");
    }

    if (*gen) {
      spec.dims = parse_dims(gen_dims);
      spec.mode = data::parse_synth_mode(gen_mode);
      const auto summary = data::generate_synthetic(spec, gen_out);
      std::cerr << "wrote " << spec.n << " samples (train " << summary.train << ", val " << summary.val << ", test "
                << summary.test << ") to " << summary.manifest.string() << "\n";
      return kOk;
    }
    if (*train_cmd) {
      const TrainConfig c = train_flags.resolve();
      c.validate();
      echo_config(c);
      TrainOptions opts;
      if (!quiet) opts.progress = &std::cerr;
      const RunRecord r = train(c, nullptr, opts);
      std::cerr << "stopped (" << r.stop_reason << ") after " << r.epochs.size() << " epochs; best epoch "
                << r.best_epoch << ", val p_mean " << r.best_p_mean << "\n";
      std::cout << (fs::path(c.run_dir) / "best.emic").string() << "\n";
      return kOk;
    }
    if (*eval_cmd) {
      const TrainConfig c = checkpoint_config(eval_ckpt, eval_config, eval_manifest);
      echo_config(c);
      const auto split = data::parse_split(eval_split);
      if (eval_both) {
        nlohmann::ordered_json j;
        j["ema"] = nlohmann::ordered_json::parse(to_json(evaluate_checkpoint(c, eval_ckpt, split, true)));
        j["raw"] = nlohmann::ordered_json::parse(to_json(evaluate_checkpoint(c, eval_ckpt, split, false)));
        std::cout << j.dump() << "\n";
      } else {
        std::cout << to_json(evaluate_checkpoint(c, eval_ckpt, split, !eval_no_ema)) << "\n";
      }
      return kOk;
    }
    if (*pred_cmd) {
      const TrainConfig c = checkpoint_config(pred_ckpt, pred_config, pred_manifest);
      echo_config(c);
      EmotionModel model = load_model(c, pred_ckpt, pred_no_ema ? checkpoint::Weights::raw : checkpoint::Weights::ema);
      const data::Manifest manifest = data::read_manifest(c.manifest);
      const auto split = data::load_split(manifest, data::parse_split(pred_split), c.model.feature_dims, c.align_length);
      const Predictions p = predict(model, split, c.batch_size, pred_raw);
      std::ostringstream csv;
      csv << "id";
      for (const char* name : data::kTargetNames) csv << "," << name;
      csv << "\n";
      for (std::size_t i = 0; i < p.ids.size(); ++i) {
        csv << p.ids[i];
        for (std::size_t k = 0; k < kNumTargets; ++k) csv << "," << shortest(p.values.at(i, k));
        csv << "\n";
      }
      if (pred_out.empty()) {
        std::cout << csv.str();
      } else {
        std::ofstream out(pred_out);
        if (!(out << csv.str())) throw DataError("cannot write " + pred_out);
      }
      return kOk;
    }
    if (*abl_cmd) {
      if (grid != "default") throw ConfigError("unknown grid '" + grid + "' (only 'default')");
      const TrainConfig c = abl_flags.resolve();
      c.validate();
      echo_config(c);
      TrainOptions opts;
      opts.progress = &std::cerr;
      const auto results = ablate(c, seeds, opts);
      std::cout << ablation_csv(results);
      return kOk;
    }
    if (*insp_cmd) {
      return insp_ckpt.empty() ? run_inspect_emif(insp_emif) : run_inspect_ckpt(insp_ckpt);
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    std::cerr << "format error at byte " << e.offset() << ": " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
