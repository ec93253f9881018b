#include "tumordet/autograd.hpp"

namespace tumordet {

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<Index>(nodes_.size()) - 1);
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = record_gradients_;
  return push(std::move(n));
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = record_gradients_;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id());
  return v;
}

Var Tape::record(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::logic_error("operation mixes variables from different tapes");
    n.requires_grad = n.requires_grad || p.requires_grad();
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Eigen::VectorXd& Tape::grad_buffer(Index id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Eigen::VectorXd::Zero(n.value.size());
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape_ != this) throw std::logic_error("loss belongs to a different tape");
  if (loss.value().size() != 1) throw ShapeError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("loss is not connected to any trainable input");

  grad_buffer(loss.id_).setConstant(1.0);
  for (Index id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
  }
  for (Node& n : nodes_) {
    if (n.param && n.grad.size() > 0) n.param->grad += n.grad;
  }
}

}  // namespace tumordet
