#include "tumordet/parameters.hpp"

#include "tumordet/ops.hpp"

#include <cmath>

namespace tumordet {

Parameter& ParameterStore::add(std::string name, Tensor value) {
  if (find(name)) throw std::logic_error("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter& ParameterStore::add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (Index i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return add(std::move(name), std::move(t));
}

Parameter& ParameterStore::add_he(std::string name, Shape shape, Index fan_in, Rng& rng) {
  return add_normal(std::move(name), std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in)), rng);
}

Parameter& ParameterStore::add_zeros(std::string name, Shape shape) { return add(std::move(name), Tensor(std::move(shape))); }

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

Index ParameterStore::scalar_count() const {
  Index n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

ConvUnit ConvUnit::create(ParameterStore& store, const std::string& name, Index in, Index out, Index kernel,
                          Index stride, bool relu, Rng& rng) {
  ConvUnit u;
  u.weight = &store.add_he(name + ".weight", {out, in, kernel, kernel}, in * kernel * kernel, rng);
  u.bias = &store.add_zeros(name + ".bias", {out});
  u.stride = stride;
  u.padding = kernel / 2;
  u.relu = relu;
  return u;
}

Var ConvUnit::operator()(Tape& tape, const Var& x) const {
  Var y = add_bias(conv2d(x, tape.param(*weight), stride, padding), tape.param(*bias));
  return relu ? tumordet::relu(y) : y;
}

}  // namespace tumordet
