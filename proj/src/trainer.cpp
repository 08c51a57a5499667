#include "emi/trainer.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace emi {

using nlohmann::ordered_json;

namespace {

Rng stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return Rng(seq);
}

constexpr std::uint32_t kInitStream = 1;
constexpr std::uint32_t kDropoutStream = 2;

ordered_json report_json(const EvalReport& r) { return ordered_json::parse(to_json(r)); }

// Swaps parameter values with the EMA shadows; calling twice restores.
void swap_with_shadows(std::span<Param* const> params, optim::Ema& ema) {
  auto& shadows = ema.shadows();
  for (std::size_t i = 0; i < params.size(); ++i) std::swap(params[i]->value, shadows[i]);
}

}  // namespace

TrainData load_train_data(const TrainConfig& config) {
  const data::Manifest manifest = data::read_manifest(config.manifest);
  TrainData d;
  d.train = data::load_split(manifest, data::Split::train, config.model.feature_dims, config.align_length);
  d.val = data::load_split(manifest, data::Split::val, config.model.feature_dims, config.align_length);
  if (d.train.samples.empty()) throw DataError("manifest has no train rows");
  if (d.val.samples.size() < 2) throw DataError("validation split needs at least two rows");
  return d;
}

std::string to_json(const StepLog& s) {
  ordered_json j;
  j["type"] = "step";
  j["epoch"] = s.epoch;
  j["step"] = s.step;
  j["lr"] = s.lr;
  j["mse"] = s.loss.mse;
  j["corr"] = s.loss.corr;
  j["aux"] = s.loss.aux;
  for (std::size_t m = 0; m < kNumModalities; ++m) j[std::string("aux_") + kModalityNames[m]] = s.loss.aux_branch[m];
  j["vad"] = s.loss.vad;
  j["total"] = s.loss.total;
  j["corr_skipped"] = s.loss.corr_skipped;
  j["grad_norm"] = s.grad_norm;
  j["clip_factor"] = s.clip_factor;
  return j.dump();
}

std::string to_json(const EpochLog& e) {
  ordered_json j;
  j["type"] = "eval";
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  j["ema"] = report_json(e.ema);
  j["raw"] = report_json(e.raw);
  return j.dump();
}

Predictions predict(EmotionModel& model, const data::SplitData& split, std::size_t batch_size, bool logits) {
  if (split.samples.empty()) throw DataError(std::string("split '") + data::to_string(split.split) + "' is empty");
  const std::size_t n = split.samples.size();
  Predictions out;
  out.values = Tensor({n, kNumTargets});
  out.targets = Tensor({n, kNumTargets});
  Rng unused(0);  // eval mode never draws
  std::size_t row = 0;
  for (const auto& indices : data::batch_plan(n, batch_size, 0, 0, false)) {
    const Batch batch = data::assemble_batch(split, indices);
    const ForwardOutputs fwd = model.forward(batch, Mode::eval, unused);
    const Tensor& src = logits ? fwd.logits : fwd.prediction;
    for (std::size_t b = 0; b < batch.size(); ++b, ++row) {
      for (std::size_t k = 0; k < kNumTargets; ++k) {
        out.values.at(row, k) = src.at(b, k);
        out.targets.at(row, k) = batch.targets.at(b, k);
      }
    }
    for (std::size_t idx : indices) {
      out.ids.push_back(split.samples[idx].id);
      out.labeled.push_back(split.samples[idx].labeled);
    }
  }
  return out;
}

EvalReport evaluate(EmotionModel& model, const data::SplitData& split, std::size_t batch_size) {
  const Predictions p = predict(model, split, batch_size);
  std::vector<double> pred, tgt;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.ids.size(); ++i) {
    if (!p.labeled[i]) continue;
    for (std::size_t k = 0; k < kNumTargets; ++k) {
      pred.push_back(p.values.at(i, k));
      tgt.push_back(p.targets.at(i, k));
    }
    ++n;
  }
  if (n < 2) throw DataError(std::string("split '") + data::to_string(split.split) + "' has fewer than two labeled rows");
  return mean_pcc(Tensor({n, kNumTargets}, std::move(pred)), Tensor({n, kNumTargets}, std::move(tgt)));
}

EmotionModel load_model(const TrainConfig& config, const std::filesystem::path& checkpoint, checkpoint::Weights which) {
  config.model.validate();
  EmotionModel model(config.model);
  const auto records = checkpoint::read(checkpoint);
  checkpoint::restore(model, records, which);
  return model;
}

EvalReport evaluate_checkpoint(const TrainConfig& config, const std::filesystem::path& checkpoint, data::Split split,
                               bool use_ema) {
  EmotionModel model = load_model(config, checkpoint, use_ema ? checkpoint::Weights::ema : checkpoint::Weights::raw);
  const data::Manifest manifest = data::read_manifest(config.manifest);
  const data::SplitData data = data::load_split(manifest, split, config.model.feature_dims, config.align_length);
  return evaluate(model, data, config.batch_size);
}

RunRecord train(const TrainConfig& config, const TrainData* preloaded, const TrainOptions& options) {
  config.validate();
  TrainData owned;
  if (!preloaded) {
    owned = load_train_data(config);
    preloaded = &owned;
  }
  const TrainData& data = *preloaded;

  RunRecord record;
  record.config_hash = config_hash(config);

  const std::filesystem::path dir = config.run_dir;
  std::ofstream log;
  if (options.write_run_dir) {
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "config.json") << to_json(config, 2) << "\n";
    log.open(dir / "log.jsonl", std::ios::trunc);
    if (!log) throw DataError("cannot write " + (dir / "log.jsonl").string());
  }

  EmotionModel model(config.model);
  Rng init_rng = stream(config.seed, kInitStream);
  Rng dropout_rng = stream(config.seed, kDropoutStream);
  model.init(init_rng);
  const std::vector<Param*> params = model.parameters();
  optim::AdamW adamw(params, config.adamw);
  optim::Ema ema(params, config.ema_decay);
  EarlyStopTracker tracker(config.patience);

  auto save = [&](const char* name) {
    if (options.write_run_dir) checkpoint::write(dir / name, checkpoint::collect(model, &ema));
  };
  save("last.emic");

  const std::size_t n_train = data.train.samples.size();
  const std::size_t steps_per_epoch = (n_train + config.batch_size - 1) / config.batch_size;
  const double total_steps = static_cast<double>(config.epochs * steps_per_epoch);
  std::size_t step = 0;
  record.stop_reason = "max_epochs";

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const double epoch_lr = optim::cosine_lr(static_cast<double>(epoch - 1), static_cast<double>(config.epochs),
                                             config.lr, config.lr_min);
    for (const auto& indices : data::batch_plan(n_train, config.batch_size, config.seed, epoch, true)) {
      const Batch batch = data::assemble_batch(data.train, indices);
      const double lr = config.lr_schedule == Cadence::epoch
                            ? epoch_lr
                            : optim::cosine_lr(static_cast<double>(step), total_steps, config.lr, config.lr_min);
      ++step;

      model.zero_grad();
      StepLog s;
      s.epoch = epoch;
      s.step = step;
      s.lr = lr;
      try {
        const ForwardOutputs fwd = model.forward(batch, Mode::train, dropout_rng);
        TotalLoss loss = total_loss(fwd, batch.targets, config.weights, config.loss);
        s.loss = loss.breakdown;
        model.backward(loss.grads);
        const optim::ClipResult clip = optim::clip_global_norm(params, config.clip_norm);
        s.grad_norm = clip.norm;
        s.clip_factor = clip.factor;
        adamw.step(params, lr);
        if (config.ema_cadence == Cadence::step) ema.update(params);
      } catch (const NumericError& e) {
        if (log.is_open()) {
          ordered_json j;
          j["type"] = "abort";
          j["epoch"] = epoch;
          j["step"] = step;
          j["reason"] = e.what();
          log << j.dump() << "\n";
        }
        throw NumericError("step " + std::to_string(step) + ": " + e.what() +
                           " (run aborted; last.emic holds the last completed epoch)");
      }
      if (log.is_open()) log << to_json(s) << "\n";
      record.steps.push_back(s);
    }
    if (config.ema_cadence == Cadence::epoch) ema.update(params);

    EpochLog e;
    e.epoch = epoch;
    e.lr = epoch_lr;
    e.raw = evaluate(model, data.val, config.batch_size);
    swap_with_shadows(params, ema);
    e.ema = evaluate(model, data.val, config.batch_size);
    swap_with_shadows(params, ema);
    if (log.is_open()) log << to_json(e) << "\n" << std::flush;
    record.epochs.push_back(e);

    const auto decision = tracker.observe(e.ema.p_mean);
    if (tracker.best_epoch() == epoch) save("best.emic");
    save("last.emic");
    if (options.progress) {
      *options.progress << "epoch " << epoch << "/" << config.epochs << "  lr " << epoch_lr << "  val p_mean ema "
                        << e.ema.p_mean << " raw " << e.raw.p_mean << "\n";
    }
    if (decision == EarlyStopTracker::Decision::stop) {
      record.stop_reason = "early_stop";
      break;
    }
  }
  record.best_epoch = tracker.best_epoch();
  record.best_p_mean = tracker.best_metric();
  return record;
}

// ---------------------------------------------------------------------------

std::string AblationCell::name() const {
  return std::string(to_string(fusion)) + "-" + to_string(objective) + "-" + (vad ? "vad" : "novad");
}

std::vector<AblationCell> ablation_grid() {
  using F = FusionMode;
  using O = Objective;
  return {
      {F::average, O::mse, false}, {F::concat, O::mse, false},  {F::concat, O::multi, false},
      {F::concat, O::multi, true}, {F::average, O::multi, false}, {F::average, O::multi, true},
      {F::average, O::mse, true},  {F::concat, O::mse, true},
  };
}

TrainConfig apply_cell(const TrainConfig& base, const AblationCell& cell) {
  TrainConfig c = base;
  c.model.fusion = cell.fusion;
  c.loss.objective = cell.objective;
  c.model.use_vad = cell.vad;
  return c;
}

std::vector<AblationResult> ablate(const TrainConfig& base, std::size_t seeds, const TrainOptions& options) {
  if (seeds == 0) throw ConfigError("ablation needs at least one seed");
  base.validate();
  const TrainData data = load_train_data(base);
  const std::filesystem::path root = base.run_dir;
  std::vector<AblationResult> results;
  for (const AblationCell& cell : ablation_grid()) {
    AblationResult r;
    r.cell = cell;
    try {
      for (std::size_t k = 0; k < seeds; ++k) {
        TrainConfig c = apply_cell(base, cell);
        c.seed = base.seed + k;
        c.run_dir = (seeds == 1 ? root / cell.name() : root / cell.name() / ("seed" + std::to_string(c.seed))).string();
        if (options.progress) *options.progress << "== " << cell.name() << " seed " << c.seed << "\n";
        const RunRecord run = train(c, &data, options);
        r.p_means.push_back(run.best_p_mean);
        if (k == 0) r.best_epoch = run.best_epoch;
      }
      double sum = 0.0;
      for (double p : r.p_means) sum += p;
      r.p_mean = sum / static_cast<double>(r.p_means.size());
      double var = 0.0;
      for (double p : r.p_means) var += (p - r.p_mean) * (p - r.p_mean);
      r.p_std = std::sqrt(var / static_cast<double>(r.p_means.size()));
    } catch (const Error& e) {
      r.status = std::string("failed: ") + e.what();
    }
    results.push_back(std::move(r));
  }
  if (options.write_run_dir) {
    std::filesystem::create_directories(root);
    std::ofstream(root / "ablation.csv") << ablation_csv(results);
  }
  return results;
}

std::string ablation_csv(const std::vector<AblationResult>& results) {
  std::ostringstream out;
  out.precision(6);
  out << std::fixed;
  out << "cell,fusion,objective,vad,seeds,p_mean,p_std,best_epoch,status\n";
  for (const auto& r : results) {
    std::string status = r.status;
    for (char& ch : status) {
      if (ch == ',' || ch == '\n') ch = ';';
    }
    out << r.cell.name() << "," << to_string(r.cell.fusion) << "," << to_string(r.cell.objective) << ","
        << (r.cell.vad ? "on" : "off") << "," << r.p_means.size() << "," << r.p_mean << "," << r.p_std << ","
        << r.best_epoch << "," << status << "\n";
  }
  return out.str();
}

}  // namespace emi
