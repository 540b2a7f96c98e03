// Named, ordered parameter storage shared by layers, optimizer and checkpoints.
#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "clap/errors.hpp"
#include "clap/random.hpp"
#include "clap/tensor.hpp"

namespace clap {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;  // same shape as value when trainable, empty otherwise
  bool trainable = true;
};

template <typename T>
class ParameterStore {
 public:
  std::size_t add(std::string name, Tensor<T> value, bool trainable) {
    if (index_.contains(name)) throw InvalidConfig("duplicate parameter name '" + name + "'");
    Parameter<T> p;
    p.name = std::move(name);
    if (trainable) p.grad = Tensor<T>(value.shape());
    p.value = std::move(value);
    p.trainable = trainable;
    index_.emplace(p.name, params_.size());
    params_.push_back(std::move(p));
    return params_.size() - 1;
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  Tensor<T>& value(std::size_t i) { return params_[i].value; }
  const Tensor<T>& value(std::size_t i) const { return params_[i].value; }
  Tensor<T>& grad(std::size_t i) { return params_[i].grad; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  const Parameter<T>* find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }
  Parameter<T>* find(const std::string& name) {
    auto it = index_.find(name);
    return it == index_.end() ? nullptr : &params_[it->second];
  }

  void zero_grad() {
    for (auto& p : params_)
      if (p.trainable) p.grad.fill(T(0));
  }

  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.trainable) n += p.value.size();
    return n;
  }

  std::size_t non_trainable_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (!p.trainable) n += p.value.size();
    return n;
  }

 private:
  std::vector<Parameter<T>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

// He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T>
Tensor<T> he_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
  return t;
}

}  // namespace clap
