#pragma once

#include "tumordet/autograd.hpp"
#include "tumordet/ops.hpp"
#include "tumordet/parameters.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace tumordet::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t[i] = u(rng);
  return t;
}

// |a - n| / max(|a| + |n|, floor): relative, with a floor so exact zeros on
// both sides compare equal.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), floor);
}

using InputFn = std::function<Var(Tape&, std::span<const Var>)>;

// Max relative error between tape gradients and central differences over
// every element of every input. `f` must return a scalar.
inline double check_input_gradients(std::vector<Tensor> inputs, const InputFn& f, double h = 1e-5) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  const Var loss = f(tape, leaves);
  tape.backward(loss);

  auto evaluate = [&]() {
    Tape t(false);
    std::vector<Var> cs;
    for (const Tensor& x : inputs) cs.push_back(t.constant(x));
    return f(t, cs).value()[0];
  };

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Eigen::VectorXd analytic = leaves[k].tape().has_grad(leaves[k].id())
                                         ? leaves[k].grad()
                                         : Eigen::VectorXd::Zero(inputs[k].size());
    for (Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k][i];
      inputs[k][i] = orig + h;
      const double up = evaluate();
      inputs[k][i] = orig - h;
      const double down = evaluate();
      inputs[k][i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

using ParamFn = std::function<Var(Tape&)>;

// Same check for every parameter in `store`; gradients come from Parameter::grad.
inline double check_parameter_gradients(ParameterStore& store, const ParamFn& f, double h = 1e-5) {
  store.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }
  auto evaluate = [&]() {
    Tape t(false);
    return f(t).value()[0];
  };
  double worst = 0;
  for (auto& p : store) {
    const Eigen::VectorXd analytic = p->grad;
    for (Index i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + h;
      const double up = evaluate();
      p->value[i] = orig - h;
      const double down = evaluate();
      p->value[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  store.zero_grad();
  return worst;
}

// Reduces a tensor-valued op to a scalar with random weights fixed by `seed`,
// so every output element carries a distinct sensitivity and repeated calls
// build the same function.
inline Var project(Tape& tape, const Var& out, std::uint64_t seed) {
  Rng rng(seed);
  const Var w = tape.constant(random_tensor(out.shape(), rng));
  return sum(mul(out, w));
}

}  // namespace tumordet::testing
