#pragma once

#include "tumordet/autograd.hpp"

#include <memory>
#include <random>
#include <string>
#include <vector>

namespace tumordet {

using Rng = std::mt19937_64;

// Owns every trainable weight of a model in registration order. Addresses
// are stable for the store's lifetime, so modules keep raw pointers.
class ParameterStore {
 public:
  Parameter& add(std::string name, Tensor value);
  // Zero-mean normal with standard deviation sqrt(2 / fan_in).
  Parameter& add_he(std::string name, Shape shape, Index fan_in, Rng& rng);
  Parameter& add_normal(std::string name, Shape shape, double stddev, Rng& rng);
  Parameter& add_zeros(std::string name, Shape shape);

  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  Index scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

// 3x3 / 1x1 convolution with bias, optionally followed by ReLU.
struct ConvUnit {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  Index stride = 1;
  Index padding = 0;
  bool relu = false;

  static ConvUnit create(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel,
                         Index stride, bool relu, Rng& rng);
  Var operator()(Tape& tape, const Var& x) const;
  Index out_channels() const { return weight->value.dim(0); }
};

}  // namespace tumordet
