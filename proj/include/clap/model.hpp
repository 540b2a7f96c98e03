// The convolutional lightweight autoencoder classifier.
//
//   encoder:  [sepconv k3 -> avgpool 2 (ceil) -> dropout] per width
//   gate:     gated = sigmoid(GAP(pooled)) * pooled
//   latent:   reshape(relu(flatten(gated)))
//   decoder:  [upsample x2 -> sepconv k3 -> dropout] x stages  => map3
//             sepconv k5 on map3                                => map5
//   fusion:   fused = concat[GAP(pooled); GAP(map3) + GAP(map5)]
//   head:     probs = softmax(linear(fused))
//
// The encoder_only variant classifies GAP(pooled) directly.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clap/config.hpp"
#include "clap/layers.hpp"
#include "clap/parameters.hpp"
#include "clap/random.hpp"
#include "clap/sepconv.hpp"
#include "clap/tensor.hpp"

namespace clap {

// Everything a forward pass leaves behind for backward and inspection.
template <typename T>
struct ForwardTrace {
  Mode mode = Mode::infer;
  Shape input_shape;

  std::vector<SepConvContext<T>> encoder_ctx;
  std::vector<PoolContext> pool_ctx;
  std::vector<DropoutContext<T>> encoder_dropout;
  std::vector<Tensor<T>> encoder_outputs;  // sepconv outputs, before pooling

  Tensor<T> pooled;  // (N, C, h, w) last pooled encoder map
  Tensor<T> gate;    // (N, C) values in (0, 1)
  Tensor<T> gated;
  Tensor<T> latent;
  ActivationContext<T> latent_relu;

  std::vector<SepConvContext<T>> decoder_ctx;
  std::vector<DropoutContext<T>> decoder_dropout;
  std::vector<Tensor<T>> decoder_outputs;  // sepconv outputs, before dropout
  SepConvContext<T> wide_ctx;
  Tensor<T> map3;
  Tensor<T> map5;

  Tensor<T> encoder_vector;  // (N, C)
  Tensor<T> decoder_vector;  // (N, C_dec) = GAP(map3) + GAP(map5)
  Tensor<T> fused;
  LinearContext<T> head_ctx;
  Tensor<T> logits;
  Tensor<T> probs;
};

struct LayerCount {
  std::string layer;
  std::size_t trainable = 0;
  std::size_t non_trainable = 0;
};

struct LayerFlops {
  std::string layer;
  std::size_t height = 0, width = 0;  // spatial extent the layer runs at
  std::size_t macs = 0;               // multiply-adds per image
  std::size_t flops() const { return 2 * macs; }
};

struct PlannedShape {
  std::string stage;
  Shape shape;  // per image: (C, H, W) or (D)
};

template <typename T>
class Model {
 public:
  static inline const std::string kHeadName = "head";
  static inline const std::string kWideName = "decoder.wide";

  explicit Model(ModelConfig config) : config_(std::move(config)) {
    config_.validate();
    Rng rng(derive_seed(config_.seed, {0x1417}));
    std::size_t in = config_.input_channels;
    for (std::size_t i = 0; i < config_.encoder_widths.size(); ++i) {
      const std::size_t out = config_.encoder_widths[i];
      encoder_.emplace_back(store_, "encoder." + std::to_string(i), in, out, config_.encoder_kernel,
                            config_.bn_order, rng);
      in = out;
    }
    const std::size_t stages = config_.decoder_stages();
    for (std::size_t j = 0; j < stages; ++j) {
      decoder_.emplace_back(store_, "decoder." + std::to_string(j), in, config_.decoder_width,
                            config_.decoder_kernel_a, config_.bn_order, rng);
      in = config_.decoder_width;
    }
    if (stages > 0) {
      wide_ = SepConvBlock<T>(store_, kWideName, in, in, config_.decoder_kernel_b, config_.bn_order, rng);
    }
    const std::size_t d = fused_width();
    head_weight_ = store_.add(kHeadName + ".weight", he_uniform<T>({d, config_.num_classes}, d, rng), true);
    head_bias_ = store_.add(kHeadName + ".bias", Tensor<T>({config_.num_classes}), true);
  }

  const ModelConfig& config() const { return config_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  bool has_decoder() const { return !decoder_.empty(); }

  std::size_t encoder_channels() const { return config_.encoder_widths.back(); }
  std::size_t fused_width() const {
    return encoder_channels() + (config_.decoder_stages() > 0 ? config_.decoder_width : 0);
  }

  // Names of every sepconv block, usable as Grad-CAM targets.
  std::vector<std::string> conv_layer_names() const {
    std::vector<std::string> names;
    for (const auto& b : encoder_) names.push_back(b.name());
    for (const auto& b : decoder_) names.push_back(b.name());
    if (has_decoder()) names.push_back(wide_.name());
    return names;
  }

  std::string last_encoder_layer() const { return encoder_.back().name(); }

  // ---- stage operations ---------------------------------------------------

  // Returns (pooled, gated).
  std::pair<Tensor<T>, Tensor<T>> encoder_forward(const Tensor<T>& x, Mode mode, Rng& rng,
                                                  ForwardTrace<T>& tr) {
    detail::require_rank4(x.shape(), "encoder_forward");
    if (x.dim(1) != config_.input_channels || x.dim(2) != config_.input_height ||
        x.dim(3) != config_.input_width) {
      throw ShapeMismatch("model expects (N," + std::to_string(config_.input_channels) + "," +
                          std::to_string(config_.input_height) + "," +
                          std::to_string(config_.input_width) + "), got " + to_string(x.shape()));
    }
    tr.mode = mode;
    tr.input_shape = x.shape();
    const std::size_t L = encoder_.size();
    tr.encoder_ctx.assign(L, {});
    tr.pool_ctx.assign(L, {});
    tr.encoder_dropout.assign(L, {});
    tr.encoder_outputs.assign(L, {});
    Tensor<T> h = x;
    for (std::size_t i = 0; i < L; ++i) {
      tr.encoder_outputs[i] = encoder_[i].forward(store_, h, mode, &tr.encoder_ctx[i]);
      h = average_pool2d(tr.encoder_outputs[i], 2, 2, true, &tr.pool_ctx[i]);
      h = dropout(h, config_.dropout_rate, mode, rng, &tr.encoder_dropout[i]);
    }
    tr.pooled = std::move(h);
    tr.gate = sigmoid(global_average_pool(tr.pooled)).reshaped({x.dim(0), encoder_channels()});
    tr.gated = channel_scale(tr.pooled, tr.gate);
    return {tr.pooled, tr.gated};
  }

  // Flatten -> ReLU -> reshape back; no learned parameters.
  Tensor<T> latent(const Tensor<T>& gated, ForwardTrace<T>& tr) const {
    detail::require_rank4(gated.shape(), "latent");
    if (gated.dim(1) != encoder_channels()) throw ShapeMismatch("latent: channel mismatch");
    const Shape spatial = gated.shape();
    auto flat = reshape(gated, {spatial[0], spatial[1] * spatial[2] * spatial[3]});
    tr.latent = reshape(relu(flat, &tr.latent_relu), spatial);
    return tr.latent;
  }

  // Returns (map3, map5).
  std::pair<Tensor<T>, Tensor<T>> decoder_forward(const Tensor<T>& latent_map, Mode mode, Rng& rng,
                                                  ForwardTrace<T>& tr) {
    if (!has_decoder()) throw InvalidConfig("encoder_only variant has no decoder");
    const std::size_t S = decoder_.size();
    tr.decoder_ctx.assign(S, {});
    tr.decoder_dropout.assign(S, {});
    tr.decoder_outputs.assign(S, {});
    Tensor<T> d = latent_map;
    for (std::size_t j = 0; j < S; ++j) {
      tr.decoder_outputs[j] = decoder_[j].forward(store_, nearest_upsample(d, 2), mode, &tr.decoder_ctx[j]);
      d = dropout(tr.decoder_outputs[j], config_.dropout_rate, mode, rng, &tr.decoder_dropout[j]);
    }
    tr.map3 = std::move(d);
    tr.map5 = wide_.forward(store_, tr.map3, mode, &tr.wide_ctx);
    return {tr.map3, tr.map5};
  }

  // Returns (probs, fused). map3/map5 are ignored for the encoder_only variant.
  std::pair<Tensor<T>, Tensor<T>> fuse_and_classify(const Tensor<T>& pooled, const Tensor<T>* map3,
                                                    const Tensor<T>* map5, ForwardTrace<T>& tr) {
    const std::size_t N = pooled.dim(0);
    tr.encoder_vector = global_average_pool(pooled).reshaped({N, encoder_channels()});
    if (has_decoder()) {
      if (!map3 || !map5) throw ShapeMismatch("fuse_and_classify: decoder maps required");
      map3->require_same_shape(*map5, "fuse_and_classify");
      tr.decoder_vector = global_average_pool(*map3);
      tr.decoder_vector += global_average_pool(*map5);
      tr.decoder_vector = std::move(tr.decoder_vector).reshaped({N, config_.decoder_width});
      tr.fused = concat_channels(tr.encoder_vector, tr.decoder_vector);
    } else {
      tr.fused = tr.encoder_vector;
    }
    tr.logits = linear(tr.fused, store_.value(head_weight_), store_.value(head_bias_), &tr.head_ctx);
    tr.probs = softmax(tr.logits);
    return {tr.probs, tr.fused};
  }

  // Full forward pass. `dropout_seed` drives the dropout masks in train mode.
  ForwardTrace<T> forward(const Tensor<T>& x, Mode mode, std::uint64_t dropout_seed = 0) {
    ForwardTrace<T> tr;
    Rng rng(dropout_seed);
    auto [pooled, gated] = encoder_forward(x, mode, rng, tr);
    if (has_decoder()) {
      auto lat = latent(gated, tr);
      auto [m3, m5] = decoder_forward(lat, mode, rng, tr);
      fuse_and_classify(pooled, &m3, &m5, tr);
    } else {
      fuse_and_classify(pooled, nullptr, nullptr, tr);
    }
#ifndef NDEBUG
    if (!tr.logits.all_finite()) throw DivergenceDetected("non-finite logits in forward pass");
#endif
    return tr;
  }

  Tensor<T> predict(const Tensor<T>& x) { return forward(x, Mode::infer).probs; }

  // Backpropagates dlogits through the trace, accumulating parameter
  // gradients. When `capture` names a sepconv block, the gradient with
  // respect to that block's output is copied into `captured`.
  void backward(ForwardTrace<T>& tr, const Tensor<T>& dlogits,
                const std::string* capture = nullptr, Tensor<T>* captured = nullptr) {
    auto maybe_capture = [&](const std::string& name, const Tensor<T>& g) {
      if (capture && captured && *capture == name) *captured = g;
    };
    Tensor<T> dfused = linear_backward(tr.head_ctx, store_.value(head_weight_), dlogits,
                                       store_.grad(head_weight_), store_.grad(head_bias_));
    Tensor<T> denc_vec;
    Tensor<T> dpooled(tr.pooled.shape());
    if (has_decoder()) {
      auto [de, dd] = split_channels(dfused, encoder_channels());
      denc_vec = std::move(de);
      // dd feeds both GAP(map3) and GAP(map5).
      Tensor<T> dmap5 = global_average_pool_backward(tr.map5.shape(), dd);
      maybe_capture(wide_.name(), dmap5);
      Tensor<T> dmap3 = global_average_pool_backward(tr.map3.shape(), dd);
      dmap3 += wide_.backward(store_, tr.wide_ctx, dmap5);
      Tensor<T> d = std::move(dmap3);
      for (std::size_t j = decoder_.size(); j-- > 0;) {
        d = dropout_backward(tr.decoder_dropout[j], d);
        maybe_capture(decoder_[j].name(), d);
        d = decoder_[j].backward(store_, tr.decoder_ctx[j], d);
        d = nearest_upsample_backward(d, 2);
      }
      // Latent ReLU works on the flattened view; shapes only differ in rank.
      Tensor<T> dgated = relu_backward(tr.latent_relu, d.reshaped(tr.latent_relu.saved.shape()))
                             .reshaped(tr.gated.shape());
      accumulate_gate_backward(tr, dgated, dpooled);
    } else {
      denc_vec = std::move(dfused);
    }
    dpooled += global_average_pool_backward(tr.pooled.shape(), denc_vec);

    Tensor<T> g = std::move(dpooled);
    for (std::size_t i = encoder_.size(); i-- > 0;) {
      g = dropout_backward(tr.encoder_dropout[i], g);
      g = average_pool2d_backward(tr.pool_ctx[i], g);
      maybe_capture(encoder_[i].name(), g);
      g = encoder_[i].backward(store_, tr.encoder_ctx[i], g);
    }
  }

  struct LossResult {
    T loss = 0;
    Tensor<T> probs;
  };

  // Zeroes gradients, runs a train-mode forward pass, and backpropagates the
  // mean cross-entropy. Gradients are left in parameters().
  LossResult loss_and_grads(const Tensor<T>& x, std::span<const std::size_t> labels,
                            std::uint64_t dropout_seed, Mode mode = Mode::train) {
    validate_labels(labels, config_.num_classes);
    store_.zero_grad();
    auto tr = forward(x, mode, dropout_seed);
    auto sce = softmax_cross_entropy(tr.logits, labels);
    backward(tr, sce.dlogits);
    return {sce.loss, std::move(sce.probs)};
  }

  // ---- accounting ---------------------------------------------------------

  std::vector<LayerCount> count_params() const {
    std::vector<LayerCount> rows;
    for (const auto& b : encoder_) rows.push_back({b.name(), b.trainable_params(), b.non_trainable_params()});
    for (const auto& b : decoder_) rows.push_back({b.name(), b.trainable_params(), b.non_trainable_params()});
    if (has_decoder()) rows.push_back({wide_.name(), wide_.trainable_params(), wide_.non_trainable_params()});
    const std::size_t d = fused_width(), k = config_.num_classes;
    rows.push_back({kHeadName, d * k + k, 0});
    return rows;
  }

  std::vector<LayerFlops> count_flops() const {
    std::vector<LayerFlops> rows;
    std::size_t h = config_.input_height, w = config_.input_width;
    for (const auto& b : encoder_) {
      rows.push_back({b.name(), h, w, b.macs(h, w)});
      h = pooled_extent(h, 2, 2, true);
      w = pooled_extent(w, 2, 2, true);
    }
    for (const auto& b : decoder_) {
      h *= 2;
      w *= 2;
      rows.push_back({b.name(), h, w, b.macs(h, w)});
    }
    if (has_decoder()) rows.push_back({wide_.name(), h, w, wide_.macs(h, w)});
    rows.push_back({kHeadName, 1, 1, fused_width() * config_.num_classes});
    return rows;
  }

  // Per-image shapes every stage should produce, derived from the config alone.
  std::vector<PlannedShape> shape_plan() const {
    std::vector<PlannedShape> plan;
    std::size_t h = config_.input_height, w = config_.input_width;
    for (const auto& b : encoder_) {
      plan.push_back({b.name(), {b.out_channels(), h, w}});
      h = pooled_extent(h, 2, 2, true);
      w = pooled_extent(w, 2, 2, true);
      plan.push_back({b.name() + ".pool", {b.out_channels(), h, w}});
    }
    plan.push_back({"bottleneck", {encoder_channels(), h, w}});
    for (const auto& b : decoder_) {
      h *= 2;
      w *= 2;
      plan.push_back({b.name(), {b.out_channels(), h, w}});
    }
    if (has_decoder()) plan.push_back({wide_.name(), {wide_.out_channels(), h, w}});
    plan.push_back({"fused", {fused_width()}});
    return plan;
  }

 private:
  // gated = pooled * g, g = sigmoid(GAP(pooled)).
  void accumulate_gate_backward(const ForwardTrace<T>& tr, const Tensor<T>& dgated, Tensor<T>& dpooled) const {
    const std::size_t NC = tr.pooled.dim(0) * tr.pooled.dim(1), P = tr.pooled.plane();
    for (std::size_t i = 0; i < NC; ++i) {
      const T g = tr.gate[i];
      const T* x = tr.pooled.ptr() + i * P;
      const T* dy = dgated.ptr() + i * P;
      T* dx = dpooled.ptr() + i * P;
      T dg = 0;
      for (std::size_t p = 0; p < P; ++p) {
        dg += dy[p] * x[p];
        dx[p] += dy[p] * g;
      }
      const T dz = dg * g * (T(1) - g) / static_cast<T>(P);
      for (std::size_t p = 0; p < P; ++p) dx[p] += dz;
    }
  }

  ModelConfig config_;
  ParameterStore<T> store_;
  std::vector<SepConvBlock<T>> encoder_;
  std::vector<SepConvBlock<T>> decoder_;
  SepConvBlock<T> wide_;
  std::size_t head_weight_ = 0, head_bias_ = 0;
};

}  // namespace clap
