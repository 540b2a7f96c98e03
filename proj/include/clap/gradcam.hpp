// Grad-CAM: channel weights are the spatial means of d(class logit)/d(activation)
// at a sepconv output; the map is ReLU(sum_c w_c * A_c), bilinearly resized to
// the input extent and min-max normalized to [0, 1].
#pragma once

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "clap/errors.hpp"
#include "clap/image.hpp"
#include "clap/model.hpp"

namespace clap {

namespace detail {

template <typename T>
const Tensor<T>& block_activation(const Model<T>& model, const ForwardTrace<T>& tr, const std::string& layer) {
  const auto names = model.conv_layer_names();
  const std::size_t L = model.config().encoder_widths.size();
  const auto it = std::find(names.begin(), names.end(), layer);
  const std::size_t i = static_cast<std::size_t>(it - names.begin());
  if (i < L) return tr.encoder_outputs[i];
  if (layer == Model<T>::kWideName) return tr.map5;
  return tr.decoder_outputs[i - L];
}

}  // namespace detail

template <typename T>
void require_conv_layer(const Model<T>& model, const std::string& layer) {
  const auto names = model.conv_layer_names();
  if (std::find(names.begin(), names.end(), layer) != names.end()) return;
  std::string known;
  for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
  throw InvalidLayer("'" + layer + "' is not a convolutional layer; choose one of: " + known);
}

// Heatmaps (H, W) for each image of x (N, 3, H, W) and its class. Inference
// mode keeps samples independent, so the batch is processed in one pass.
// Parameter gradients touched on the way are cleared before returning.
template <typename T>
std::vector<Tensor<T>> grad_cam(Model<T>& model, const Tensor<T>& x, const std::vector<std::size_t>& classes,
                                std::string layer = "") {
  if (layer.empty()) layer = model.last_encoder_layer();
  require_conv_layer(model, layer);
  detail::require_rank4(x.shape(), "grad_cam");
  const std::size_t N = x.dim(0), K = model.config().num_classes;
  if (classes.size() != N) throw ShapeMismatch("grad_cam needs one class per image");
  validate_labels(classes, K);

  auto tr = model.forward(x, Mode::infer);
  Tensor<T> onehot({N, K});
  for (std::size_t n = 0; n < N; ++n) onehot[n * K + classes[n]] = T(1);
  Tensor<T> grad;
  model.backward(tr, onehot, &layer, &grad);
  model.parameters().zero_grad();

  const Tensor<T>& act = detail::block_activation(model, tr, layer);
  const std::size_t C = act.dim(1), h = act.dim(2), w = act.dim(3), P = h * w;
  std::vector<Tensor<T>> maps;
  for (std::size_t n = 0; n < N; ++n) {
    Tensor<T> cam({h, w});
    for (std::size_t c = 0; c < C; ++c) {
      const T* g = grad.ptr() + (n * C + c) * P;
      const T* a = act.ptr() + (n * C + c) * P;
      T alpha = 0;
      for (std::size_t p = 0; p < P; ++p) alpha += g[p];
      alpha /= static_cast<T>(P);
      for (std::size_t p = 0; p < P; ++p) cam[p] += alpha * a[p];
    }
    for (auto& v : cam.data()) v = std::max(v, T(0));
    Tensor<T> up = resize_bilinear(cam, x.dim(2), x.dim(3));
    const auto [lo, hi] = std::minmax_element(up.data().begin(), up.data().end());
    const T min = *lo, range = *hi - *lo;
    // A flat map (including an all-zero one) carries no location; report zeros.
    if (!(range > T(0))) {
      up.fill(T(0));
    } else {
      for (auto& v : up.data()) v = (v - min) / range;
    }
    maps.push_back(std::move(up));
  }
  return maps;
}

// (x, y) of the first maximum in row-major order.
template <typename T>
std::pair<std::size_t, std::size_t> heatmap_argmax(const Tensor<T>& heat) {
  const auto data = heat.data();
  const std::size_t i = static_cast<std::size_t>(std::max_element(data.begin(), data.end()) - data.begin());
  return {i % heat.dim(1), i / heat.dim(1)};
}

// Blends a blue-to-red ramp of the heatmap over the image, half and half.
template <typename T>
Image heatmap_overlay(const Image& img, const Tensor<T>& heat) {
  const std::size_t h = img.dim(1), w = img.dim(2);
  if (heat.rank() != 2 || heat.dim(0) != h || heat.dim(1) != w) throw ShapeMismatch("overlay: heatmap extent differs");
  Image out({3, h, w});
  for (std::size_t i = 0; i < h * w; ++i) {
    const float v = std::clamp(static_cast<float>(heat[i]), 0.0f, 1.0f);
    const float ramp[3] = {std::clamp(2 * v - 0.5f, 0.0f, 1.0f), 1 - std::abs(2 * v - 1), std::clamp(1.5f - 2 * v, 0.0f, 1.0f)};
    for (std::size_t c = 0; c < 3; ++c) out[c * h * w + i] = 0.5f * img[c * h * w + i] + 0.5f * ramp[c];
  }
  return out;
}

}  // namespace clap
