// Layer primitives with explicit forward/backward passes.
//
// Each forward call fills a context that the matching backward call consumes
// exactly once. Parameter gradients are accumulated (+=) into caller-owned
// tensors so the same kernels serve single layers and whole models.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "clap/errors.hpp"
#include "clap/parallel.hpp"
#include "clap/random.hpp"
#include "clap/tensor.hpp"

namespace clap {

enum class Mode { train, infer };
enum class Padding { same, valid };

namespace detail {

inline void require_rank4(const Shape& s, const char* op) {
  if (s.size() != 4) throw ShapeMismatch(std::string(op) + " expects (N,C,H,W), got " + to_string(s));
}

// Marks a context consumed; throws if it was already used or never filled.
struct ContextGuard {
  bool filled = false;
  bool consumed = false;

  void arm() {
    filled = true;
    consumed = false;
  }
  void consume(const char* op) {
    if (!filled) throw ContextMismatch(std::string(op) + ": context was never filled by forward");
    if (consumed) throw ContextMismatch(std::string(op) + ": context already consumed");
    consumed = true;
  }
};

inline void require_grad_shape(const Shape& expected, const Shape& got, const char* op) {
  if (expected != got) {
    throw ContextMismatch(std::string(op) + ": gradient shape " + to_string(got) +
                          " does not match forward output " + to_string(expected));
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Depthwise convolution. kernel: (C, k, k); one spatial filter per channel.

struct ConvGeometry {
  std::size_t out_h = 0, out_w = 0, pad_top = 0, pad_left = 0;
};

inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t k, std::size_t stride,
                                  Padding padding) {
  ConvGeometry g;
  if (padding == Padding::same) {
    g.out_h = (h + stride - 1) / stride;
    g.out_w = (w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + k;
    const std::size_t need_w = (g.out_w - 1) * stride + k;
    g.pad_top = need_h > h ? (need_h - h) / 2 : 0;
    g.pad_left = need_w > w ? (need_w - w) / 2 : 0;
  } else {
    if (h < k || w < k) throw DegenerateInput("valid convolution input smaller than kernel");
    g.out_h = (h - k) / stride + 1;
    g.out_w = (w - k) / stride + 1;
  }
  return g;
}

template <typename T>
struct DepthwiseContext {
  Tensor<T> input;
  std::size_t k = 0, stride = 1;
  ConvGeometry geom;
  Shape out_shape;
  detail::ContextGuard guard;
};

namespace detail {

// Output columns ow for which ow*stride + kx - pad lies in [0, width).
inline void valid_cols(std::size_t kx, std::size_t pad, std::size_t stride, std::size_t width,
                       std::size_t out_w, std::size_t& lo, std::size_t& hi) {
  const long long off = static_cast<long long>(kx) - static_cast<long long>(pad);
  const long long s = static_cast<long long>(stride);
  long long first = off >= 0 ? 0 : (-off + s - 1) / s;
  long long last = (static_cast<long long>(width) - 1 - off);
  last = last < 0 ? -1 : last / s;
  lo = static_cast<std::size_t>(std::max<long long>(first, 0));
  hi = static_cast<std::size_t>(std::min<long long>(last + 1, static_cast<long long>(out_w)));
  if (hi < lo) hi = lo;
}

}  // namespace detail

template <typename T>
Tensor<T> depthwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, std::size_t stride,
                           Padding padding, DepthwiseContext<T>* ctx = nullptr) {
  detail::require_rank4(x.shape(), "depthwise_conv2d");
  if (kernel.rank() != 3 || kernel.dim(0) != x.dim(1) || kernel.dim(1) != kernel.dim(2)) {
    throw ShapeMismatch("depthwise_conv2d: kernel " + to_string(kernel.shape()) + " for input " +
                        to_string(x.shape()));
  }
  if (stride == 0) throw InvalidConfig("depthwise_conv2d: stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), k = kernel.dim(1);
  const ConvGeometry g = conv_geometry(H, W, k, stride, padding);
  Tensor<T> out({N, C, g.out_h, g.out_w});

  parallel_for(N * C, [&](std::size_t nc) {
    const std::size_t c = nc % C;
    const T* in = x.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * g.out_h * g.out_w;
    const T* ker = kernel.ptr() + c * k * k;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T wv = ker[ky * k + kx];
        std::size_t lo = 0, hi = 0;
        detail::valid_cols(kx, g.pad_left, stride, W, g.out_w, lo, hi);
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const long long ih = static_cast<long long>(oh * stride + ky) - static_cast<long long>(g.pad_top);
          if (ih < 0 || ih >= static_cast<long long>(H)) continue;
          const T* row = in + static_cast<std::size_t>(ih) * W;
          T* orow = dst + oh * g.out_w;
          for (std::size_t ow = lo; ow < hi; ++ow) {
            orow[ow] += wv * row[ow * stride + kx - g.pad_left];
          }
        }
      }
    }
  });

  if (ctx) {
    ctx->input = x;
    ctx->k = k;
    ctx->stride = stride;
    ctx->geom = g;
    ctx->out_shape = out.shape();
    ctx->guard.arm();
  }
  return out;
}

// Returns dL/dx and accumulates dL/dkernel into dkernel.
template <typename T>
Tensor<T> depthwise_conv2d_backward(DepthwiseContext<T>& ctx, const Tensor<T>& kernel,
                                    const Tensor<T>& dy, Tensor<T>& dkernel) {
  ctx.guard.consume("depthwise_conv2d_backward");
  detail::require_grad_shape(ctx.out_shape, dy.shape(), "depthwise_conv2d_backward");
  kernel.require_same_shape(dkernel, "depthwise_conv2d_backward");
  const Tensor<T>& x = ctx.input;
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), k = ctx.k;
  const std::size_t s = ctx.stride;
  const ConvGeometry& g = ctx.geom;
  Tensor<T> dx(x.shape());

  auto for_each_tap = [&](std::size_t ky, std::size_t kx, auto&& body) {
    std::size_t lo = 0, hi = 0;
    detail::valid_cols(kx, g.pad_left, s, W, g.out_w, lo, hi);
    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
      const long long ih = static_cast<long long>(oh * s + ky) - static_cast<long long>(g.pad_top);
      if (ih < 0 || ih >= static_cast<long long>(H)) continue;
      body(static_cast<std::size_t>(ih), oh, lo, hi);
    }
  };

  parallel_for(N * C, [&](std::size_t nc) {
    const std::size_t c = nc % C;
    const T* grad = dy.ptr() + nc * g.out_h * g.out_w;
    T* dst = dx.ptr() + nc * H * W;
    const T* ker = kernel.ptr() + c * k * k;
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T wv = ker[ky * k + kx];
        for_each_tap(ky, kx, [&](std::size_t ih, std::size_t oh, std::size_t lo, std::size_t hi) {
          T* row = dst + ih * W;
          const T* grow = grad + oh * g.out_w;
          for (std::size_t ow = lo; ow < hi; ++ow) row[ow * s + kx - g.pad_left] += wv * grow[ow];
        });
      }
    }
  });

  parallel_for(C, [&](std::size_t c) {
    for (std::size_t ky = 0; ky < k; ++ky) {
      for (std::size_t kx = 0; kx < k; ++kx) {
        T acc = 0;
        for (std::size_t n = 0; n < N; ++n) {
          const T* in = x.ptr() + (n * C + c) * H * W;
          const T* grad = dy.ptr() + (n * C + c) * g.out_h * g.out_w;
          for_each_tap(ky, kx, [&](std::size_t ih, std::size_t oh, std::size_t lo, std::size_t hi) {
            const T* row = in + ih * W;
            const T* grow = grad + oh * g.out_w;
            for (std::size_t ow = lo; ow < hi; ++ow) acc += row[ow * s + kx - g.pad_left] * grow[ow];
          });
        }
        dkernel[(c * k + ky) * k + kx] += acc;
      }
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution. kernel: (C_in, C_out), bias: (C_out).

template <typename T>
struct PointwiseContext {
  Tensor<T> input;
  Shape out_shape;
  detail::ContextGuard guard;
};

template <typename T>
Tensor<T> pointwise_conv2d(const Tensor<T>& x, const Tensor<T>& kernel, const Tensor<T>& bias,
                           PointwiseContext<T>* ctx = nullptr) {
  detail::require_rank4(x.shape(), "pointwise_conv2d");
  if (kernel.rank() != 2 || kernel.dim(0) != x.dim(1) || bias.size() != kernel.dim(1)) {
    throw ShapeMismatch("pointwise_conv2d: kernel " + to_string(kernel.shape()) + ", bias " +
                        to_string(bias.shape()) + " for input " + to_string(x.shape()));
  }
  const std::size_t N = x.dim(0), Ci = x.dim(1), Co = kernel.dim(1), P = x.plane();
  Tensor<T> out({N, Co, x.dim(2), x.dim(3)});
  parallel_for(N * Co, [&](std::size_t no) {
    const std::size_t n = no / Co, o = no % Co;
    T* dst = out.ptr() + no * P;
    std::fill_n(dst, P, bias[o]);
    const T* src = x.ptr() + n * Ci * P;
    for (std::size_t c = 0; c < Ci; ++c) {
      const T wv = kernel[c * Co + o];
      const T* in = src + c * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] += wv * in[p];
    }
  });
  if (ctx) {
    ctx->input = x;
    ctx->out_shape = out.shape();
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> pointwise_conv2d_backward(PointwiseContext<T>& ctx, const Tensor<T>& kernel,
                                    const Tensor<T>& dy, Tensor<T>& dkernel, Tensor<T>& dbias) {
  ctx.guard.consume("pointwise_conv2d_backward");
  detail::require_grad_shape(ctx.out_shape, dy.shape(), "pointwise_conv2d_backward");
  const Tensor<T>& x = ctx.input;
  const std::size_t N = x.dim(0), Ci = x.dim(1), Co = kernel.dim(1), P = x.plane();
  Tensor<T> dx(x.shape());
  parallel_for(N * Ci, [&](std::size_t nc) {
    const std::size_t n = nc / Ci, c = nc % Ci;
    T* dst = dx.ptr() + nc * P;
    const T* grad = dy.ptr() + n * Co * P;
    for (std::size_t o = 0; o < Co; ++o) {
      const T wv = kernel[c * Co + o];
      const T* g = grad + o * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] += wv * g[p];
    }
  });
  parallel_for(Ci, [&](std::size_t c) {
    for (std::size_t o = 0; o < Co; ++o) {
      T acc = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* in = x.ptr() + (n * Ci + c) * P;
        const T* g = dy.ptr() + (n * Co + o) * P;
        for (std::size_t p = 0; p < P; ++p) acc += in[p] * g[p];
      }
      dkernel[c * Co + o] += acc;
    }
  });
  for (std::size_t o = 0; o < Co; ++o) {
    T acc = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const T* g = dy.ptr() + (n * Co + o) * P;
      for (std::size_t p = 0; p < P; ++p) acc += g[p];
    }
    dbias[o] += acc;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Batch normalization over (N, H, W) per channel.

struct BatchNormOptions {
  double epsilon = 1e-5;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
};

template <typename T>
struct BatchNormContext {
  Tensor<T> normalized;      // x-hat
  std::vector<T> inv_std;    // per channel
  Mode mode = Mode::infer;
  detail::ContextGuard guard;
};

// Works on (N,C,H,W) and (N,C). Train mode normalizes with batch statistics
// and updates running_mean/running_var; infer mode uses the running values.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, Mode mode,
                     const BatchNormOptions& opt = {}, BatchNormContext<T>* ctx = nullptr) {
  if (x.rank() != 4 && x.rank() != 2) throw ShapeMismatch("batch_norm expects rank 2 or 4");
  const std::size_t N = x.dim(0), C = x.dim(1), P = x.plane();
  for (const Tensor<T>* t : std::array<const Tensor<T>*, 4>{&gamma, &beta, &running_mean, &running_var}) {
    if (t->size() != C) throw ShapeMismatch("batch_norm: per-channel parameter size mismatch");
  }
  Tensor<T> out(x.shape());
  Tensor<T> xhat(x.shape());
  std::vector<T> inv_std(C);
  const T eps = static_cast<T>(opt.epsilon);
  const T mom = static_cast<T>(opt.momentum);

  parallel_for(C, [&](std::size_t c) {
    T mean = 0, var = 0;
    if (mode == Mode::train) {
      const T count = static_cast<T>(N * P);
      for (std::size_t n = 0; n < N; ++n) {
        const T* in = x.ptr() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) mean += in[p];
      }
      mean /= count;
      for (std::size_t n = 0; n < N; ++n) {
        const T* in = x.ptr() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) var += (in[p] - mean) * (in[p] - mean);
      }
      var /= count;
      running_mean[c] = mom * running_mean[c] + (T(1) - mom) * mean;
      running_var[c] = mom * running_var[c] + (T(1) - mom) * var;
    } else {
      mean = running_mean[c];
      var = running_var[c];
    }
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[c] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        const T h = (x[base + p] - mean) * is;
        xhat[base + p] = h;
        out[base + p] = gamma[c] * h + beta[c];
      }
    }
  });

  if (ctx) {
    ctx->normalized = std::move(xhat);
    ctx->inv_std = std::move(inv_std);
    ctx->mode = mode;
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> batch_norm_backward(BatchNormContext<T>& ctx, const Tensor<T>& gamma, const Tensor<T>& dy,
                              Tensor<T>& dgamma, Tensor<T>& dbeta) {
  ctx.guard.consume("batch_norm_backward");
  detail::require_grad_shape(ctx.normalized.shape(), dy.shape(), "batch_norm_backward");
  const Tensor<T>& xhat = ctx.normalized;
  const std::size_t N = xhat.dim(0), C = xhat.dim(1), P = xhat.plane();
  Tensor<T> dx(xhat.shape());
  parallel_for(C, [&](std::size_t c) {
    T sum_dy = 0, sum_dy_xhat = 0;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t base = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        sum_dy += dy[base + p];
        sum_dy_xhat += dy[base + p] * xhat[base + p];
      }
    }
    dgamma[c] += sum_dy_xhat;
    dbeta[c] += sum_dy;
    const T scale = gamma[c] * ctx.inv_std[c];
    if (ctx.mode == Mode::train) {
      const T count = static_cast<T>(N * P);
      const T mean_dy = sum_dy / count, mean_dy_xhat = sum_dy_xhat / count;
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) {
          dx[base + p] = scale * (dy[base + p] - mean_dy - xhat[base + p] * mean_dy_xhat);
        }
      }
    } else {
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t base = (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) dx[base + p] = scale * dy[base + p];
      }
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// Elementwise activations.

template <typename T>
struct ActivationContext {
  Tensor<T> saved;  // relu: input, sigmoid: output
  detail::ContextGuard guard;
};

template <typename T>
Tensor<T> relu(const Tensor<T>& x, ActivationContext<T>* ctx = nullptr) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  if (ctx) {
    ctx->saved = x;
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> relu_backward(ActivationContext<T>& ctx, const Tensor<T>& dy) {
  ctx.guard.consume("relu_backward");
  detail::require_grad_shape(ctx.saved.shape(), dy.shape(), "relu_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = ctx.saved[i] > T(0) ? dy[i] : T(0);
  return dx;
}

template <typename T>
T sigmoid(T v) {
  if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
  const T e = std::exp(v);
  return e / (T(1) + e);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x, ActivationContext<T>* ctx = nullptr) {
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sigmoid(x[i]);
  if (ctx) {
    ctx->saved = out;
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(ActivationContext<T>& ctx, const Tensor<T>& dy) {
  ctx.guard.consume("sigmoid_backward");
  detail::require_grad_shape(ctx.saved.shape(), dy.shape(), "sigmoid_backward");
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) {
    const T s = ctx.saved[i];
    dx[i] = dy[i] * s * (T(1) - s);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Average pooling. ceil_mode rounds odd extents up; edge windows average
// over their valid cells only.

inline std::size_t pooled_extent(std::size_t in, std::size_t k, std::size_t stride, bool ceil_mode) {
  if (in < k) return ceil_mode ? 1 : 0;
  const std::size_t span = in - k;
  return (ceil_mode ? (span + stride - 1) / stride : span / stride) + 1;
}

struct PoolContext {
  Shape in_shape, out_shape;
  std::size_t k = 0, stride = 0;
  detail::ContextGuard guard;
};

template <typename T>
Tensor<T> average_pool2d(const Tensor<T>& x, std::size_t k, std::size_t stride, bool ceil_mode,
                         PoolContext* ctx = nullptr) {
  detail::require_rank4(x.shape(), "average_pool2d");
  if (k == 0 || stride == 0) throw InvalidConfig("average_pool2d: kernel and stride must be positive");
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t oh_n = pooled_extent(H, k, stride, ceil_mode);
  const std::size_t ow_n = pooled_extent(W, k, stride, ceil_mode);
  if (oh_n == 0 || ow_n == 0) throw DegenerateInput("average_pool2d: input smaller than window");
  Tensor<T> out({N, C, oh_n, ow_n});
  parallel_for(N * C, [&](std::size_t nc) {
    const T* in = x.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      const std::size_t h0 = oh * stride, h1 = std::min(H, h0 + k);
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const std::size_t w0 = ow * stride, w1 = std::min(W, w0 + k);
        T acc = 0;
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) acc += in[h * W + w];
        dst[oh * ow_n + ow] = acc / static_cast<T>((h1 - h0) * (w1 - w0));
      }
    }
  });
  if (ctx) {
    ctx->in_shape = x.shape();
    ctx->out_shape = out.shape();
    ctx->k = k;
    ctx->stride = stride;
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> average_pool2d_backward(PoolContext& ctx, const Tensor<T>& dy) {
  ctx.guard.consume("average_pool2d_backward");
  detail::require_grad_shape(ctx.out_shape, dy.shape(), "average_pool2d_backward");
  const std::size_t N = ctx.in_shape[0], C = ctx.in_shape[1], H = ctx.in_shape[2], W = ctx.in_shape[3];
  const std::size_t oh_n = ctx.out_shape[2], ow_n = ctx.out_shape[3];
  const std::size_t k = ctx.k, stride = ctx.stride;
  Tensor<T> dx(ctx.in_shape);
  parallel_for(N * C, [&](std::size_t nc) {
    T* dst = dx.ptr() + nc * H * W;
    const T* grad = dy.ptr() + nc * oh_n * ow_n;
    for (std::size_t oh = 0; oh < oh_n; ++oh) {
      const std::size_t h0 = oh * stride, h1 = std::min(H, h0 + k);
      for (std::size_t ow = 0; ow < ow_n; ++ow) {
        const std::size_t w0 = ow * stride, w1 = std::min(W, w0 + k);
        const T share = grad[oh * ow_n + ow] / static_cast<T>((h1 - h0) * (w1 - w0));
        for (std::size_t h = h0; h < h1; ++h)
          for (std::size_t w = w0; w < w1; ++w) dst[h * W + w] += share;
      }
    }
  });
  return dx;
}

// ---------------------------------------------------------------------------
// Inverted dropout.

template <typename T>
struct DropoutContext {
  Tensor<T> mask;  // empty when the layer acted as identity
  Shape shape;
  detail::ContextGuard guard;
};

inline void validate_dropout_rate(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw InvalidRate("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Mode mode, Rng& rng,
                  DropoutContext<T>* ctx = nullptr) {
  validate_dropout_rate(rate);
  Tensor<T> out = x;
  Tensor<T> mask;
  if (mode == Mode::train && rate > 0.0) {
    mask = Tensor<T>(x.shape());
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
      out[i] *= mask[i];
    }
  }
  if (ctx) {
    ctx->mask = std::move(mask);
    ctx->shape = x.shape();
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> dropout_backward(DropoutContext<T>& ctx, const Tensor<T>& dy) {
  ctx.guard.consume("dropout_backward");
  detail::require_grad_shape(ctx.shape, dy.shape(), "dropout_backward");
  if (ctx.mask.empty()) return dy;
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * ctx.mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Global average pooling: (N,C,H,W) -> (N,C,1,1).

template <typename T>
Tensor<T> global_average_pool(const Tensor<T>& x) {
  detail::require_rank4(x.shape(), "global_average_pool");
  const std::size_t NC = x.dim(0) * x.dim(1), P = x.plane();
  Tensor<T> out({x.dim(0), x.dim(1), 1, 1});
  for (std::size_t i = 0; i < NC; ++i) {
    T acc = 0;
    const T* in = x.ptr() + i * P;
    for (std::size_t p = 0; p < P; ++p) acc += in[p];
    out[i] = acc / static_cast<T>(P);
  }
  return out;
}

// `dy` may be (N,C) or (N,C,1,1); the result has `in_shape`.
template <typename T>
Tensor<T> global_average_pool_backward(const Shape& in_shape, const Tensor<T>& dy) {
  detail::require_rank4(in_shape, "global_average_pool_backward");
  const std::size_t NC = in_shape[0] * in_shape[1], P = in_shape[2] * in_shape[3];
  if (dy.size() != NC) throw ContextMismatch("global_average_pool_backward: gradient size mismatch");
  Tensor<T> dx(in_shape);
  for (std::size_t i = 0; i < NC; ++i) {
    const T share = dy[i] / static_cast<T>(P);
    std::fill_n(dx.ptr() + i * P, P, share);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling by an integer factor.

template <typename T>
Tensor<T> nearest_upsample(const Tensor<T>& x, std::size_t factor) {
  detail::require_rank4(x.shape(), "nearest_upsample");
  if (factor < 2) throw InvalidConfig("nearest_upsample: factor must be >= 2");
  const std::size_t H = x.dim(2), W = x.dim(3), OH = H * factor, OW = W * factor;
  Tensor<T> out({x.dim(0), x.dim(1), OH, OW});
  parallel_for(x.dim(0) * x.dim(1), [&](std::size_t nc) {
    const T* in = x.ptr() + nc * H * W;
    T* dst = out.ptr() + nc * OH * OW;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) dst[oh * OW + ow] = in[(oh / factor) * W + ow / factor];
  });
  return out;
}

template <typename T>
Tensor<T> nearest_upsample_backward(const Tensor<T>& dy, std::size_t factor) {
  detail::require_rank4(dy.shape(), "nearest_upsample_backward");
  if (factor < 2 || dy.dim(2) % factor || dy.dim(3) % factor) {
    throw ContextMismatch("nearest_upsample_backward: gradient extent not divisible by factor");
  }
  const std::size_t OH = dy.dim(2), OW = dy.dim(3), H = OH / factor, W = OW / factor;
  Tensor<T> dx({dy.dim(0), dy.dim(1), H, W});
  parallel_for(dy.dim(0) * dy.dim(1), [&](std::size_t nc) {
    const T* grad = dy.ptr() + nc * OH * OW;
    T* dst = dx.ptr() + nc * H * W;
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) dst[(oh / factor) * W + ow / factor] += grad[oh * OW + ow];
  });
  return dx;
}

// ---------------------------------------------------------------------------
// Affine map x (N,D) * weight (D,K) + bias (K).

template <typename T>
struct LinearContext {
  Tensor<T> input;
  Shape out_shape;
  detail::ContextGuard guard;
};

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 LinearContext<T>* ctx = nullptr) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(0) != x.dim(1) ||
      bias.size() != weight.dim(1)) {
    throw ShapeMismatch("linear: input " + to_string(x.shape()) + ", weight " +
                        to_string(weight.shape()) + ", bias " + to_string(bias.shape()));
  }
  const std::size_t N = x.dim(0), D = x.dim(1), K = weight.dim(1);
  Tensor<T> out({N, K});
  for (std::size_t n = 0; n < N; ++n) {
    T* dst = out.ptr() + n * K;
    std::copy_n(bias.ptr(), K, dst);
    for (std::size_t d = 0; d < D; ++d) {
      const T xv = x[n * D + d];
      const T* wrow = weight.ptr() + d * K;
      for (std::size_t k = 0; k < K; ++k) dst[k] += xv * wrow[k];
    }
  }
  if (ctx) {
    ctx->input = x;
    ctx->out_shape = out.shape();
    ctx->guard.arm();
  }
  return out;
}

template <typename T>
Tensor<T> linear_backward(LinearContext<T>& ctx, const Tensor<T>& weight, const Tensor<T>& dy,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
  ctx.guard.consume("linear_backward");
  detail::require_grad_shape(ctx.out_shape, dy.shape(), "linear_backward");
  const Tensor<T>& x = ctx.input;
  const std::size_t N = x.dim(0), D = x.dim(1), K = weight.dim(1);
  Tensor<T> dx({N, D});
  for (std::size_t n = 0; n < N; ++n) {
    const T* g = dy.ptr() + n * K;
    for (std::size_t d = 0; d < D; ++d) {
      const T* wrow = weight.ptr() + d * K;
      T acc = 0;
      for (std::size_t k = 0; k < K; ++k) acc += g[k] * wrow[k];
      dx[n * D + d] = acc;
    }
  }
  for (std::size_t d = 0; d < D; ++d) {
    T* dw = dweight.ptr() + d * K;
    for (std::size_t n = 0; n < N; ++n) {
      const T xv = x[n * D + d];
      const T* g = dy.ptr() + n * K;
      for (std::size_t k = 0; k < K; ++k) dw[k] += xv * g[k];
    }
  }
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) dbias[k] += dy[n * K + k];
  return dx;
}

// ---------------------------------------------------------------------------
// Softmax and cross-entropy over rows of an (N,K) tensor.

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeMismatch("softmax expects (N,K), got " + to_string(logits.shape()));
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  Tensor<T> out(logits.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.ptr() + n * K;
    T* dst = out.ptr() + n * K;
    const T peak = *std::max_element(row, row + K);
    T total = 0;
    for (std::size_t k = 0; k < K; ++k) total += (dst[k] = std::exp(row[k] - peak));
    for (std::size_t k = 0; k < K; ++k) dst[k] /= total;
  }
  return out;
}

inline void validate_labels(std::span<const std::size_t> labels, std::size_t classes) {
  for (auto l : labels) {
    if (l >= classes) {
      throw InvalidLabel("label " + std::to_string(l) + " out of range for " +
                         std::to_string(classes) + " classes");
    }
  }
}

// Mean of -ln p[label] over rows of a probability matrix.
template <typename T>
T cross_entropy(const Tensor<T>& probs, std::span<const std::size_t> labels) {
  if (probs.rank() != 2 || probs.dim(0) != labels.size()) {
    throw ShapeMismatch("cross_entropy: probabilities " + to_string(probs.shape()) + " for " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t K = probs.dim(1);
  validate_labels(labels, K);
  T loss = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) loss -= std::log(probs[n * K + labels[n]]);
  return loss / static_cast<T>(labels.size());
}

template <typename T>
struct SoftmaxCrossEntropy {
  T loss = 0;
  Tensor<T> probs;
  Tensor<T> dlogits;  // gradient of the mean loss
};

// Fused, numerically stable softmax + mean cross-entropy; dlogits = (p - onehot) / N.
template <typename T>
SoftmaxCrossEntropy<T> softmax_cross_entropy(const Tensor<T>& logits,
                                             std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeMismatch("softmax_cross_entropy: logits " + to_string(logits.shape()) + " for " +
                        std::to_string(labels.size()) + " labels");
  }
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  validate_labels(labels, K);
  SoftmaxCrossEntropy<T> r;
  r.probs = softmax(logits);
  r.dlogits = r.probs;
  for (std::size_t n = 0; n < N; ++n) {
    const T* row = logits.ptr() + n * K;
    const T peak = *std::max_element(row, row + K);
    T total = 0;
    for (std::size_t k = 0; k < K; ++k) total += std::exp(row[k] - peak);
    r.loss += peak + std::log(total) - row[labels[n]];
    r.dlogits[n * K + labels[n]] -= T(1);
  }
  const T inv_n = T(1) / static_cast<T>(N);
  r.loss *= inv_n;
  for (auto& v : r.dlogits.data()) v *= inv_n;
  return r;
}

}  // namespace clap
