#pragma once

#include "tumordet/tensor.hpp"

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tumordet {

class Tape;

// A trainable weight that outlives any single tape. Gradients from every
// backward pass are accumulated into `grad` until the optimizer clears them.
struct Parameter {
  std::string name;
  Tensor value;
  Eigen::VectorXd grad;

  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Eigen::VectorXd::Zero(value.size())) {}
  void zero_grad() { grad.setZero(); }
};

// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  Index id() const { return id_; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  // Empty until backward() reaches this node.
  const Eigen::VectorXd& grad() const;

 private:
  friend class Tape;
  Var(Tape* tape, Index id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  Index id_ = -1;
};

// Ordered record of one forward pass. Operations append nodes; backward()
// replays their closures in reverse. A tape belongs to one thread and one
// forward/backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, Index self)>;

  // With gradients off, parameters and leaves enter as constants and no
  // backward state is kept.
  explicit Tape(bool record_gradients = true) : record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value);
  // Registers `p` once per tape; repeated calls return the same node.
  Var param(Parameter& p);

  // Appends a result node. The closure is dropped when no parent needs a
  // gradient, so inference-only passes carry no backward state.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward);
  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
    return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()), std::move(backward));
  }

  // Seeds d(loss)/d(loss) = 1 and propagates to every requires-grad node;
  // parameter leaves then add their gradient into Parameter::grad.
  void backward(const Var& loss);

  const Tensor& value(Index id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool has_grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() > 0; }
  const Eigen::VectorXd& grad(Index id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  // Zero-initialized on first access.
  Eigen::VectorXd& grad_buffer(Index id);

  Index size() const { return static_cast<Index>(nodes_.size()); }

 private:
  struct Node {
    Tensor value;
    Eigen::VectorXd grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  Var push(Node node);

  bool record_gradients_ = true;
  // deque keeps references to earlier values valid while ops append.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, Index> param_nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }
inline const Eigen::VectorXd& Var::grad() const { return tape_->grad(id_); }

}  // namespace tumordet
