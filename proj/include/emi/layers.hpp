#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "emi/ops.hpp"
#include "emi/tensor.hpp"

namespace emi {

// The single run PRNG. Every stochastic decision (initialization, dropout
// masks, shuffling, synthetic data) draws from an instance of this engine.
using Rng = std::mt19937_64;

enum class Mode { train, eval };

// A learnable tensor paired with its gradient accumulator.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;

  Param() = default;
  Param(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(std::move(shape)) {}

  void zero_grad();
};

// Affine map y = x W^T + b over the rows of x.
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(std::string name, std::size_t in, std::size_t out, bool with_bias = true);

  std::size_t in_features() const { return weight_.value.dim(1); }
  std::size_t out_features() const { return weight_.value.dim(0); }
  bool has_bias() const { return has_bias_; }

  // Uniform in +-sqrt(6 / (in + out)); bias zeroed.
  void init(Rng& rng);

  Tensor forward(const Tensor& x);
  // Accumulates parameter gradients and returns the input gradient. With
  // need_input_grad = false the (unused) input gradient is not computed and
  // an empty tensor is returned. Consumes the cached input.
  Tensor backward(const Tensor& upstream, bool need_input_grad = true);

  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

 private:
  Param weight_;
  Param bias_;
  bool has_bias_ = true;
  std::optional<Tensor> cached_input_;
};

// Stateless activation with cached input/output for backward.
class Activation {
 public:
  explicit Activation(ops::Unary op = ops::Unary::relu) : op_(op) {}

  ops::Unary op() const { return op_; }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& upstream);

  // Smallest |input| seen by the last relu forward; +inf for other ops.
  // Finite-difference checks are only meaningful away from the kink.
  double kink_margin() const;

 private:
  ops::Unary op_;
  std::optional<Tensor> input_;
  std::optional<Tensor> output_;
};

// Bernoulli keep decisions for dropout, two per 64-bit draw: the low 32 bits
// decide one element, the high 32 bits the next. One sampler per forward
// pass; an unused high half is discarded.
class KeepSampler {
 public:
  KeepSampler(Rng& rng, std::uint64_t threshold) : rng_(rng), threshold_(threshold) {}

  bool next() {
    if (!pending_) {
      word_ = rng_();
      pending_ = true;
      return (word_ & 0xffffffffu) < threshold_;
    }
    pending_ = false;
    return (word_ >> 32) < threshold_;
  }

 private:
  Rng& rng_;
  std::uint64_t threshold_;
  std::uint64_t word_ = 0;
  bool pending_ = false;
};

// Inverted dropout: kept elements are scaled by 1/(1-p) at train time so
// the eval path is the exact identity.
class DropoutLayer {
 public:
  explicit DropoutLayer(double rate = 0.0);

  double rate() const { return rate_; }
  // An element is kept iff its 32-bit uniform value is below this threshold.
  std::uint64_t keep_threshold() const { return keep_threshold_; }
  double kept_scale() const { return 1.0 / (1.0 - rate_); }
  Tensor forward(const Tensor& x, Mode mode, Rng& rng);
  Tensor backward(const Tensor& upstream);

 private:
  double rate_;
  std::uint64_t keep_threshold_;
  std::optional<Tensor> mask_;  // empty when the last forward was an identity
  bool has_forward_ = false;
};

// Linear -> activation -> dropout -> mean over time, applied to [B x T x d]
// and producing [B x H]. Fused so the [B*T x H] intermediates are not kept
// per stage; results, dropout draws and gradients are bit-identical to
// chaining LinearLayer, Activation, DropoutLayer and ops::reduce_mean.
class SequenceEncoder {
 public:
  SequenceEncoder() = default;
  SequenceEncoder(std::string name, std::size_t in, std::size_t hidden, ops::Unary activation, double dropout);

  LinearLayer& projector() { return projector_; }
  const LinearLayer& projector() const { return projector_; }
  void init(Rng& rng) { projector_.init(rng); }

  // With pre_activation_mean, also returns the time mean of the projector
  // output (before the activation).
  Tensor forward(const Tensor& x, Mode mode, Rng& rng, Tensor* pre_activation_mean = nullptr);
  // upstream: [B x H] gradient of the output. pre_mean_grad, if given, is the
  // gradient with respect to pre_activation_mean.
  void backward(const Tensor& upstream, const Tensor* pre_mean_grad = nullptr);

  double kink_margin() const;

 private:
  LinearLayer projector_;
  ops::Unary activation_ = ops::Unary::relu;
  DropoutLayer dropout_;
  Tensor pre_;                      // [B*T x H] projector output of the last forward
  std::vector<std::uint8_t> keep_;  // dropout decisions; empty when dropout was inactive
  std::size_t batch_ = 0, steps_ = 0;
  bool has_forward_ = false;
};

// Resamples a [L x d] sequence to [target x d]: output row i is the mean of
// input rows [floor(i L / T), ceil((i + 1) L / T)). Works for L < T as well.
Tensor adaptive_avg_pool(const Tensor& x, std::size_t target);
Tensor adaptive_avg_pool_backward(const Tensor& upstream, std::size_t input_length);

}  // namespace emi
