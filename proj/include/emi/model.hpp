#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "emi/layers.hpp"

namespace emi {

inline constexpr std::size_t kNumTargets = 6;
inline constexpr std::size_t kNumVad = 3;
inline constexpr std::size_t kNumModalities = 3;

// Fixed modality order used everywhere: files, concatenation, parameter names.
enum class Modality : std::size_t { visual = 0, audio = 1, text = 2 };
inline constexpr std::array<const char*, kNumModalities> kModalityNames{"visual", "audio", "text"};

enum class FusionMode { concat, average };

FusionMode parse_fusion(const std::string& s);
const char* to_string(FusionMode mode);
ops::Unary parse_activation(const std::string& s);
const char* to_string(ops::Unary op);

// Aligned samples stacked for one step. features[m] has shape [B, T, d_m].
struct Batch {
  std::vector<std::string> ids;
  std::array<Tensor, kNumModalities> features;
  Tensor targets;  // [B x 6]

  std::size_t size() const { return ids.size(); }
};

struct ModelConfig {
  std::array<std::size_t, kNumModalities> feature_dims{0, 0, 0};
  std::size_t hidden = 256;
  std::size_t head_hidden = 0;  // width of the fusion head's hidden layer; 0 means `hidden`
  double dropout = 0.2;
  FusionMode fusion = FusionMode::concat;
  bool use_vad = true;
  ops::Unary activation = ops::Unary::relu;
  bool output_sigmoid = true;

  std::size_t fused_dim() const { return fusion == FusionMode::concat ? kNumModalities * hidden : hidden; }
  std::size_t head_dim() const { return head_hidden == 0 ? hidden : head_hidden; }
  void validate() const;
};

// Closed-form count of learnable scalars for a configuration.
std::size_t parameter_count(const ModelConfig& config);

struct ForwardOutputs {
  Tensor prediction;                              // [B x 6], main head
  Tensor logits;                                  // [B x 6], main head before the output activation
  std::array<Tensor, kNumModalities> aux;         // [B x 6] per branch
  Tensor vad;                                     // [B x 3]; empty when the VAD pathway is disabled
  std::array<Tensor, kNumModalities> embeddings;  // [B x H]; audio entry is post-injection
};

// Gradients of the scalar objective with respect to the model outputs.
struct OutputGrads {
  Tensor prediction;
  std::array<Tensor, kNumModalities> aux;
  Tensor vad;  // may be empty: no direct loss on the VAD head
};

// z_fus from per-branch embeddings ([H] vectors or [B x H] rows), in
// visual/audio/text order.
Tensor fuse(const Tensor& z_visual, const Tensor& z_audio, const Tensor& z_text, FusionMode mode);
// Gradients of fuse with respect to each input.
std::array<Tensor, kNumModalities> fuse_backward(const Tensor& upstream, FusionMode mode, std::size_t hidden);

// Three projector branches, auxiliary regressors, the VAD-aware audio
// pathway and the shared regression head.
class EmotionModel {
 public:
  explicit EmotionModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  void init(Rng& rng);

  ForwardOutputs forward(const Batch& batch, Mode mode, Rng& rng);
  // Reverse traversal of the last forward; accumulates into parameter grads.
  void backward(const OutputGrads& grads);

  // All learnable tensors in a fixed order.
  std::vector<Param*> parameters();
  std::vector<const Param*> parameters() const;
  void zero_grad();

  // Smallest |pre-activation| over relu inputs of the last forward.
  double kink_margin() const;

 private:
  struct Branch {
    SequenceEncoder encoder;
    LinearLayer aux_head;
    Activation aux_activation;
  };
  struct Cache {
    std::size_t batch = 0;
    std::size_t steps = 0;  // aligned sequence length of the last forward
  };

  ModelConfig config_;
  std::array<Branch, kNumModalities> branches_;
  LinearLayer vad_head_;
  Activation vad_activation_{ops::Unary::sigmoid};
  LinearLayer vad_injection_;
  LinearLayer head_fc1_;
  Activation head_activation_;
  DropoutLayer head_dropout_;
  LinearLayer head_fc2_;
  Activation head_output_;
  std::optional<Cache> cache_;
};

}  // namespace emi
