// Depthwise-separable convolution block: depthwise k x k, pointwise 1x1 with
// bias, then ReLU and batch normalization.
#pragma once

#include <cstddef>
#include <string>

#include "clap/layers.hpp"
#include "clap/parameters.hpp"

namespace clap {

// literal: BatchNorm(ReLU(conv)). conventional: ReLU(BatchNorm(conv)).
enum class BnOrder { literal, conventional };

template <typename T>
struct SepConvContext {
  DepthwiseContext<T> depthwise;
  PointwiseContext<T> pointwise;
  ActivationContext<T> activation;
  BatchNormContext<T> norm;
};

template <typename T>
class SepConvBlock {
 public:
  SepConvBlock() = default;

  SepConvBlock(ParameterStore<T>& store, std::string name, std::size_t in_channels,
               std::size_t out_channels, std::size_t kernel, BnOrder order, Rng& rng)
      : name_(std::move(name)), cin_(in_channels), cout_(out_channels), k_(kernel), order_(order) {
    if (kernel % 2 == 0) throw InvalidConfig("separable kernel must be odd, got " + std::to_string(kernel));
    depthwise_ = store.add(name_ + ".depthwise", he_uniform<T>({cin_, k_, k_}, k_ * k_, rng), true);
    pointwise_ = store.add(name_ + ".pointwise", he_uniform<T>({cin_, cout_}, cin_, rng), true);
    bias_ = store.add(name_ + ".bias", Tensor<T>({cout_}), true);
    gamma_ = store.add(name_ + ".bn.gamma", Tensor<T>({cout_}, T(1)), true);
    beta_ = store.add(name_ + ".bn.beta", Tensor<T>({cout_}), true);
    mean_ = store.add(name_ + ".bn.running_mean", Tensor<T>({cout_}), false);
    var_ = store.add(name_ + ".bn.running_var", Tensor<T>({cout_}, T(1)), false);
  }

  const std::string& name() const { return name_; }
  std::size_t in_channels() const { return cin_; }
  std::size_t out_channels() const { return cout_; }
  std::size_t kernel() const { return k_; }

  Tensor<T> forward(ParameterStore<T>& store, const Tensor<T>& x, Mode mode,
                    SepConvContext<T>* ctx = nullptr, const BatchNormOptions& bn = {}) const {
    auto h = depthwise_conv2d(x, store.value(depthwise_), 1, Padding::same,
                              ctx ? &ctx->depthwise : nullptr);
    h = pointwise_conv2d(h, store.value(pointwise_), store.value(bias_),
                         ctx ? &ctx->pointwise : nullptr);
    auto norm = [&](const Tensor<T>& in) {
      return batch_norm(in, store.value(gamma_), store.value(beta_), store.value(mean_),
                        store.value(var_), mode, bn, ctx ? &ctx->norm : nullptr);
    };
    if (order_ == BnOrder::literal) return norm(relu(h, ctx ? &ctx->activation : nullptr));
    return relu(norm(h), ctx ? &ctx->activation : nullptr);
  }

  // Returns dL/dx and accumulates parameter gradients into the store.
  Tensor<T> backward(ParameterStore<T>& store, SepConvContext<T>& ctx, const Tensor<T>& dy) const {
    Tensor<T> g;
    if (order_ == BnOrder::literal) {
      g = batch_norm_backward(ctx.norm, store.value(gamma_), dy, store.grad(gamma_), store.grad(beta_));
      g = relu_backward(ctx.activation, g);
    } else {
      g = relu_backward(ctx.activation, dy);
      g = batch_norm_backward(ctx.norm, store.value(gamma_), g, store.grad(gamma_), store.grad(beta_));
    }
    g = pointwise_conv2d_backward(ctx.pointwise, store.value(pointwise_), g, store.grad(pointwise_),
                                  store.grad(bias_));
    return depthwise_conv2d_backward(ctx.depthwise, store.value(depthwise_), g, store.grad(depthwise_));
  }

  // Closed-form counts: depthwise k^2*C_in, pointwise C_in*C_out + C_out,
  // batch norm 2*C_out trainable (gamma, beta) + 2*C_out running statistics.
  std::size_t trainable_params() const { return k_ * k_ * cin_ + cin_ * cout_ + cout_ + 2 * cout_; }
  std::size_t non_trainable_params() const { return 2 * cout_; }

  // Multiply-adds for one image at spatial extent h x w (stride 1, same padding).
  std::size_t macs(std::size_t h, std::size_t w) const {
    return (k_ * k_ * cin_ + cin_ * cout_) * h * w;
  }

 private:
  std::string name_;
  std::size_t cin_ = 0, cout_ = 0, k_ = 3;
  BnOrder order_ = BnOrder::literal;
  std::size_t depthwise_ = 0, pointwise_ = 0, bias_ = 0, gamma_ = 0, beta_ = 0, mean_ = 0, var_ = 0;
};

}  // namespace clap
