#include "emi/model.hpp"

#include <limits>

namespace emi {

FusionMode parse_fusion(const std::string& s) {
  if (s == "concat") return FusionMode::concat;
  if (s == "average") return FusionMode::average;
  throw ConfigError("unknown fusion mode '" + s + "' (expected concat|average)");
}

const char* to_string(FusionMode mode) { return mode == FusionMode::concat ? "concat" : "average"; }

ops::Unary parse_activation(const std::string& s) {
  if (s == "relu") return ops::Unary::relu;
  if (s == "sigmoid") return ops::Unary::sigmoid;
  if (s == "identity") return ops::Unary::identity;
  throw ConfigError("unknown activation '" + s + "' (expected relu|sigmoid|identity)");
}

const char* to_string(ops::Unary op) {
  switch (op) {
    case ops::Unary::relu: return "relu";
    case ops::Unary::sigmoid: return "sigmoid";
    case ops::Unary::identity: return "identity";
  }
  return "?";
}

void ModelConfig::validate() const {
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (feature_dims[m] == 0) {
      throw ConfigError(std::string("feature dimension for ") + kModalityNames[m] + " must be set and positive");
    }
  }
  if (hidden == 0) throw ConfigError("hidden dimension must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t h = c.hidden;
  std::size_t n = 0;
  for (auto d : c.feature_dims) n += d * h + h;            // projectors
  n += kNumModalities * (kNumTargets * h + kNumTargets);  // auxiliary heads
  if (c.use_vad) n += (kNumVad * h + kNumVad) + kNumVad * h;
  const std::size_t k = c.head_dim();
  n += c.fused_dim() * k + k + kNumTargets * k + kNumTargets;
  return n;
}

Tensor fuse(const Tensor& z_visual, const Tensor& z_audio, const Tensor& z_text, FusionMode mode) {
  require_same_shape(z_visual, z_audio, "fuse");
  require_same_shape(z_visual, z_text, "fuse");
  const bool vector_input = z_visual.rank() == 1;
  if (!vector_input && z_visual.rank() != 2) {
    throw DimensionError("fuse: expected [H] or [B x H] embeddings, got " + shape_to_string(z_visual.shape()));
  }
  const std::size_t rows = vector_input ? 1 : z_visual.dim(0);
  const std::size_t h = z_visual.shape().back();
  const std::array<const Tensor*, kNumModalities> parts{&z_visual, &z_audio, &z_text};

  if (mode == FusionMode::average) {
    Tensor out(z_visual.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (z_visual[i] + z_audio[i] + z_text[i]) / 3.0;
    return out;
  }
  Tensor out({rows, kNumModalities * h});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t m = 0; m < kNumModalities; ++m) {
      for (std::size_t j = 0; j < h; ++j) out[r * kNumModalities * h + m * h + j] = (*parts[m])[r * h + j];
    }
  }
  return vector_input ? std::move(out).reshaped({kNumModalities * h}) : out;
}

std::array<Tensor, kNumModalities> fuse_backward(const Tensor& upstream, FusionMode mode, std::size_t hidden) {
  std::array<Tensor, kNumModalities> grads;
  if (mode == FusionMode::average) {
    Tensor g(upstream.shape());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = upstream[i] / 3.0;
    grads.fill(g);
    return grads;
  }
  const std::size_t width = kNumModalities * hidden;
  if (upstream.shape().back() != width) {
    throw DimensionError("fuse_backward: upstream " + shape_to_string(upstream.shape()) +
                         " does not match concat width " + std::to_string(width));
  }
  const std::size_t rows = upstream.size() / width;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    Tensor g({rows, hidden});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t j = 0; j < hidden; ++j) g[r * hidden + j] = upstream[r * width + m * hidden + j];
    }
    grads[m] = upstream.rank() == 1 ? std::move(g).reshaped({hidden}) : std::move(g);
  }
  return grads;
}

EmotionModel::EmotionModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t h = config_.hidden;
  const ops::Unary out_act = config_.output_sigmoid ? ops::Unary::sigmoid : ops::Unary::identity;
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const std::string name = kModalityNames[m];
    branches_[m] = Branch{
        SequenceEncoder(name + ".proj", config_.feature_dims[m], h, config_.activation, config_.dropout),
        LinearLayer(name + ".aux", h, kNumTargets),
        Activation(out_act),
    };
  }
  if (config_.use_vad) {
    vad_head_ = LinearLayer("audio.vad", h, kNumVad);
    vad_injection_ = LinearLayer("audio.inject", kNumVad, h, /*with_bias=*/false);
  }
  head_fc1_ = LinearLayer("head.fc1", config_.fused_dim(), config_.head_dim());
  head_activation_ = Activation(config_.activation);
  head_dropout_ = DropoutLayer(config_.dropout);
  head_fc2_ = LinearLayer("head.fc2", config_.head_dim(), kNumTargets);
  head_output_ = Activation(out_act);
}

void EmotionModel::init(Rng& rng) {
  for (auto& b : branches_) {
    b.encoder.init(rng);
    b.aux_head.init(rng);
  }
  if (config_.use_vad) {
    vad_head_.init(rng);
    vad_injection_.init(rng);
  }
  head_fc1_.init(rng);
  head_fc2_.init(rng);
}

std::vector<Param*> EmotionModel::parameters() {
  std::vector<Param*> out;
  auto add = [&out](LinearLayer& l) {
    out.push_back(&l.weight());
    if (l.has_bias()) out.push_back(&l.bias());
  };
  for (auto& b : branches_) add(b.encoder.projector());
  for (auto& b : branches_) add(b.aux_head);
  if (config_.use_vad) {
    add(vad_head_);
    add(vad_injection_);
  }
  add(head_fc1_);
  add(head_fc2_);
  return out;
}

std::vector<const Param*> EmotionModel::parameters() const {
  auto mutable_params = const_cast<EmotionModel*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

void EmotionModel::zero_grad() {
  for (auto* p : parameters()) p->zero_grad();
}

ForwardOutputs EmotionModel::forward(const Batch& batch, Mode mode, Rng& rng) {
  if (batch.size() == 0) throw DataError("model forward: empty batch");
  const std::size_t bsz = batch.size();
  const std::size_t steps = batch.features[0].dim(1);
  for (const auto& f : batch.features) {
    if (f.rank() != 3 || f.dim(0) != bsz || f.dim(1) != steps) {
      throw DimensionError("model forward: inconsistent batch feature shape " + shape_to_string(f.shape()));
    }
  }

  ForwardOutputs out;
  Tensor a_mean;  // time mean of the audio projector output, before the activation
  for (std::size_t m = 0; m < kNumModalities; ++m) {
    if (batch.features[m].dim(2) != config_.feature_dims[m]) {
      throw ConfigError(std::string(kModalityNames[m]) + " features " + shape_to_string(batch.features[m].shape()) +
                        " do not match configured dimension " + std::to_string(config_.feature_dims[m]));
    }
    const bool vad_source = config_.use_vad && m == static_cast<std::size_t>(Modality::audio);
    out.embeddings[m] = branches_[m].encoder.forward(batch.features[m], mode, rng, vad_source ? &a_mean : nullptr);
  }

  if (config_.use_vad) {
    out.vad = vad_activation_.forward(vad_head_.forward(a_mean));
    auto& z_audio = out.embeddings[static_cast<std::size_t>(Modality::audio)];
    z_audio = ops::add(z_audio, vad_injection_.forward(out.vad));
  }

  for (std::size_t m = 0; m < kNumModalities; ++m) {
    Branch& b = branches_[m];
    out.aux[m] = b.aux_activation.forward(b.aux_head.forward(out.embeddings[m]));
  }

  Tensor fused = fuse(out.embeddings[0], out.embeddings[1], out.embeddings[2], config_.fusion);
  Tensor hidden = head_dropout_.forward(head_activation_.forward(head_fc1_.forward(fused)), mode, rng);
  out.logits = head_fc2_.forward(hidden);
  out.prediction = head_output_.forward(out.logits);
  cache_ = Cache{bsz, steps};
  return out;
}

void EmotionModel::backward(const OutputGrads& grads) {
  if (!cache_) throw StateError("model backward: no forward pass to differentiate (stale or missing cache)");
  const std::size_t h = config_.hidden;
  cache_.reset();

  Tensor g = head_output_.backward(grads.prediction);
  g = head_fc2_.backward(g);
  g = head_activation_.backward(head_dropout_.backward(g));
  g = head_fc1_.backward(g);
  std::array<Tensor, kNumModalities> dz = fuse_backward(g, config_.fusion, h);

  for (std::size_t m = 0; m < kNumModalities; ++m) {
    Branch& b = branches_[m];
    ops::accumulate(dz[m], b.aux_head.backward(b.aux_activation.backward(grads.aux[m])));
  }

  Tensor da_mean;
  if (config_.use_vad) {
    const auto audio = static_cast<std::size_t>(Modality::audio);
    Tensor dv = vad_injection_.backward(dz[audio]);
    if (!grads.vad.empty()) ops::accumulate(dv, grads.vad);
    da_mean = vad_head_.backward(vad_activation_.backward(dv));
  }

  for (std::size_t m = 0; m < kNumModalities; ++m) {
    const bool vad_source = !da_mean.empty() && m == static_cast<std::size_t>(Modality::audio);
    branches_[m].encoder.backward(dz[m], vad_source ? &da_mean : nullptr);
  }
}

double EmotionModel::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& b : branches_) margin = std::min(margin, b.encoder.kink_margin());
  return std::min(margin, head_activation_.kink_margin());
}

}  // namespace emi
