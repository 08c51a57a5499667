#include "emi/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "emi/kernels.hpp"

namespace emi {

void Param::zero_grad() {
  for (auto& g : grad.data()) g = 0.0;
}

LinearLayer::LinearLayer(std::string name, std::size_t in, std::size_t out, bool with_bias)
    : weight_(name + ".weight", {out, in}), has_bias_(with_bias) {
  if (with_bias) bias_ = Param(name + ".bias", {out});
}

void LinearLayer::init(Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in_features() + out_features()));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& w : weight_.value.data()) w = dist(rng);
  if (has_bias_) {
    for (auto& b : bias_.value.data()) b = 0.0;
  }
}

Tensor LinearLayer::forward(const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != in_features()) {
    throw DimensionError(weight_.name + ": input " + shape_to_string(x.shape()) + " incompatible with weight " +
                         shape_to_string(weight_.value.shape()));
  }
  Tensor y = ops::matmul(x, ops::transpose(weight_.value));
  if (has_bias_) {
    // In place: same sums as ops::add_row_vector without a second buffer.
    const std::size_t cols = out_features();
    const auto& k = kernels::active();
    double* out = y.data().data();
    for (std::size_t i = 0; i < y.size(); i += cols) k.add(cols, out + i, bias_.value.data().data(), out + i);
  }
  cached_input_ = x;
  return y;
}

Tensor LinearLayer::backward(const Tensor& upstream, bool need_input_grad) {
  if (!cached_input_) throw StateError(weight_.name + ": backward called without a matching forward");
  const Tensor& x = *cached_input_;
  if (upstream.rank() != 2 || upstream.dim(0) != x.dim(0) || upstream.dim(1) != out_features()) {
    throw DimensionError(weight_.name + ": upstream " + shape_to_string(upstream.shape()) +
                         " does not match forward batch " + shape_to_string(x.shape()));
  }
  ops::accumulate(weight_.grad, ops::matmul_tn(upstream, x));
  if (has_bias_) ops::accumulate(bias_.grad, ops::sum_rows(upstream));
  Tensor input_grad;
  if (need_input_grad) input_grad = ops::matmul(upstream, weight_.value);
  cached_input_.reset();
  return input_grad;
}

Tensor Activation::forward(const Tensor& x) {
  Tensor y = ops::elementwise(op_, x);
  input_ = x;
  output_ = y;
  return y;
}

Tensor Activation::backward(const Tensor& upstream) {
  if (!input_) throw StateError("activation: backward called without a matching forward");
  Tensor g = ops::unary_backward(op_, *input_, *output_, upstream);
  input_.reset();
  output_.reset();
  return g;
}

double Activation::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  if (op_ != ops::Unary::relu || !input_) return margin;
  for (double v : input_->data()) margin = std::min(margin, std::abs(v));
  return margin;
}

DropoutLayer::DropoutLayer(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
  // keep iff a uniform 32-bit value falls below round((1 - p) 2^32)
  const long double keep = 1.0L - static_cast<long double>(rate);
  keep_threshold_ = static_cast<std::uint64_t>(std::llround(keep * 4294967296.0L));
}

Tensor DropoutLayer::forward(const Tensor& x, Mode mode, Rng& rng) {
  has_forward_ = true;
  if (mode == Mode::eval || rate_ == 0.0) {
    mask_.reset();
    return x;
  }
  const double kept_scale = 1.0 / (1.0 - rate_);
  Tensor mask(x.shape());
  KeepSampler sampler(rng, keep_threshold_);
  for (auto& m : mask.data()) m = sampler.next() ? kept_scale : 0.0;
  Tensor y = ops::mul(x, mask);
  mask_ = std::move(mask);
  return y;
}

Tensor DropoutLayer::backward(const Tensor& upstream) {
  if (!has_forward_) throw StateError("dropout: backward called without a matching forward");
  has_forward_ = false;
  if (!mask_) return upstream;
  Tensor g = ops::mul(upstream, *mask_);
  mask_.reset();
  return g;
}

SequenceEncoder::SequenceEncoder(std::string name, std::size_t in, std::size_t hidden, ops::Unary activation,
                                 double dropout)
    : projector_(std::move(name), in, hidden), activation_(activation), dropout_(dropout) {
}

Tensor SequenceEncoder::forward(const Tensor& x, Mode mode, Rng& rng, Tensor* pre_activation_mean) {
  if (x.rank() != 3) throw DimensionError("sequence encoder: expected [B x T x d], got " + shape_to_string(x.shape()));
  batch_ = x.dim(0);
  steps_ = x.dim(1);
  pre_ = projector_.forward(x.reshaped({batch_ * steps_, x.dim(2)}));
  const std::size_t h = projector_.out_features();
  const bool relu = activation_ == ops::Unary::relu;
  const bool sig = activation_ == ops::Unary::sigmoid;
  const bool drop = mode == Mode::train && dropout_.rate() > 0.0;
  KeepSampler sampler(rng, dropout_.keep_threshold());
  const double kept_scale = dropout_.kept_scale();
  const double n = static_cast<double>(steps_);

  keep_.clear();
  if (drop) keep_.resize(pre_.size());
  Tensor out({batch_, h});
  std::vector<double> acc(h);
  const double* p = pre_.data().data();
  for (std::size_t b = 0; b < batch_; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t t = 0; t < steps_; ++t) {
      const std::size_t row = (b * steps_ + t) * h;
      for (std::size_t j = 0; j < h; ++j) {
        double v = p[row + j];
        if (relu) v = v > 0.0 ? v : 0.0;
        if (sig) v = ops::sigmoid(v);
        if (drop) {
          const bool keep = sampler.next();
          keep_[row + j] = keep;
          v = v * (keep ? kept_scale : 0.0);
        }
        acc[j] += v;
      }
    }
    for (std::size_t j = 0; j < h; ++j) out.at(b, j) = acc[j] / n;
  }
  require_finite(out, "sequence encoder");
  if (pre_activation_mean) {
    *pre_activation_mean = ops::reduce_mean(pre_.reshaped({batch_, steps_, h}), 1);
  }
  has_forward_ = true;
  return out;
}

void SequenceEncoder::backward(const Tensor& upstream, const Tensor* pre_mean_grad) {
  if (!has_forward_) throw StateError(projector_.weight().name + ": backward called without a matching forward");
  const std::size_t h = projector_.out_features();
  if (upstream.rank() != 2 || upstream.dim(0) != batch_ || upstream.dim(1) != h) {
    throw DimensionError("sequence encoder: upstream " + shape_to_string(upstream.shape()) + " does not match [" +
                         std::to_string(batch_) + " x " + std::to_string(h) + "]");
  }
  if (pre_mean_grad && pre_mean_grad->shape() != upstream.shape()) {
    throw DimensionError("sequence encoder: pre-activation mean gradient has shape " +
                         shape_to_string(pre_mean_grad->shape()));
  }
  has_forward_ = false;
  const bool relu = activation_ == ops::Unary::relu;
  const bool sig = activation_ == ops::Unary::sigmoid;
  const bool drop = !keep_.empty();
  const double kept_scale = dropout_.kept_scale();
  const double n = static_cast<double>(steps_);
  Tensor g(pre_.shape());
  const double* p = pre_.data().data();
  double* gd = g.data().data();
  for (std::size_t b = 0; b < batch_; ++b) {
    const double* up = upstream.data().data() + b * h;
    const double* extra = pre_mean_grad ? pre_mean_grad->data().data() + b * h : nullptr;
    for (std::size_t t = 0; t < steps_; ++t) {
      const std::size_t row = (b * steps_ + t) * h;
      for (std::size_t j = 0; j < h; ++j) {
        double v = up[j] / n;
        if (drop) v = v * (keep_[row + j] ? kept_scale : 0.0);
        if (relu) v = p[row + j] > 0.0 ? v : 0.0;
        if (sig) {
          const double y = ops::sigmoid(p[row + j]);
          v = v * y * (1.0 - y);
        }
        if (extra) v = v + extra[j] / n;
        gd[row + j] = v;
      }
    }
  }
  projector_.backward(g, /*need_input_grad=*/false);
  keep_.clear();
}

double SequenceEncoder::kink_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  if (activation_ != ops::Unary::relu || !has_forward_) return margin;
  for (double v : pre_.data()) margin = std::min(margin, std::abs(v));
  return margin;
}

namespace {

struct Bin {
  std::size_t begin, end;
};

Bin pool_bin(std::size_t i, std::size_t length, std::size_t target) {
  return {i * length / target, ((i + 1) * length + target - 1) / target};
}

}  // namespace

Tensor adaptive_avg_pool(const Tensor& x, std::size_t target) {
  if (x.empty() || x.rank() != 2) throw DataError("adaptive_avg_pool: empty or non-matrix sequence");
  if (target == 0) throw ConfigError("adaptive_avg_pool: target length must be positive");
  const std::size_t length = x.dim(0), d = x.dim(1);
  if (length == target) return x;
  Tensor out({target, d});
  for (std::size_t i = 0; i < target; ++i) {
    const Bin bin = pool_bin(i, length, target);
    double* dst = out.data().data() + i * d;
    kernels::active().col_sum(bin.end - bin.begin, d, x.data().data() + bin.begin * d, dst);
    const double count = static_cast<double>(bin.end - bin.begin);
    for (std::size_t j = 0; j < d; ++j) dst[j] /= count;
  }
  return out;
}

Tensor adaptive_avg_pool_backward(const Tensor& upstream, std::size_t input_length) {
  if (upstream.rank() != 2 || input_length == 0) {
    throw DimensionError("adaptive_avg_pool_backward: bad upstream " + shape_to_string(upstream.shape()));
  }
  const std::size_t target = upstream.dim(0), d = upstream.dim(1);
  if (input_length == target) return upstream;
  Tensor grad({input_length, d});
  for (std::size_t i = 0; i < target; ++i) {
    const Bin bin = pool_bin(i, input_length, target);
    const double count = static_cast<double>(bin.end - bin.begin);
    for (std::size_t r = bin.begin; r < bin.end; ++r) {
      for (std::size_t j = 0; j < d; ++j) grad[r * d + j] += upstream[i * d + j] / count;
    }
  }
  return grad;
}

}  // namespace emi
