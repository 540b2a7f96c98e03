// SGD with momentum: v <- m*v - lr*g; p <- p + v.
#pragma once

#include <vector>

#include "clap/errors.hpp"
#include "clap/parameters.hpp"
#include "clap/tensor.hpp"

namespace clap {

// Updates one tensor in place. An empty velocity starts at zero.
template <typename T>
void sgd_step(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& velocity, T lr, T momentum) {
  param.require_same_shape(grad, "sgd_step gradient");
  if (velocity.size() == 0) velocity = Tensor<T>(param.shape());
  param.require_same_shape(velocity, "sgd_step velocity");
  T* p = param.ptr();
  T* v = velocity.ptr();
  const T* g = grad.ptr();
  for (std::size_t i = 0; i < param.size(); ++i) {
    v[i] = momentum * v[i] - lr * g[i];
    p[i] += v[i];
  }
}

// One velocity slot per store entry; non-trainable entries keep an empty slot.
template <typename T>
class SgdMomentum {
 public:
  explicit SgdMomentum(T momentum = T(0.9)) : momentum_(momentum) {}

  void step(ParameterStore<T>& store, T lr) {
    if (velocity_.size() != store.size()) velocity_.resize(store.size());
    for (std::size_t i = 0; i < store.size(); ++i) {
      if (!store[i].trainable) continue;
      sgd_step(store[i].value, store[i].grad, velocity_[i], lr, momentum_);
    }
  }

  T momentum() const { return momentum_; }
  std::vector<Tensor<T>>& velocity() { return velocity_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }

 private:
  T momentum_;
  std::vector<Tensor<T>> velocity_;
};

}  // namespace clap
