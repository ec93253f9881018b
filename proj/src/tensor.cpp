#include "tumordet/tensor.hpp"

#include <sstream>

namespace tumordet {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

Index element_count(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) {
    if (e <= 0) throw ShapeError("non-positive extent in shape " + to_string(shape));
    n *= e;
  }
  return n;
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)), data_(Eigen::VectorXd::Zero(element_count(shape_))) {}

Tensor::Tensor(Shape shape, Eigen::VectorXd data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw ShapeError("data length " + std::to_string(data_.size()) + " does not match shape " + to_string(shape_));
  }
}

Tensor::Tensor(std::initializer_list<Index> shape, double fill) : Tensor(Shape(shape)) { data_.setConstant(fill); }

Tensor Tensor::constant(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.data_.setConstant(value);
  return t;
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  Eigen::VectorXd d(static_cast<Index>(values.size()));
  Index i = 0;
  for (double v : values) d[i++] = v;
  return Tensor({static_cast<Index>(values.size())}, std::move(d));
}

MatrixView Tensor::matrix(Index rows, Index cols) {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor of shape " + to_string(shape_));
  return MatrixView(data_.data(), rows, cols);
}

ConstMatrixView Tensor::matrix(Index rows, Index cols) const {
  if (rows * cols != size()) throw ShapeError("matrix view does not cover tensor of shape " + to_string(shape_));
  return ConstMatrixView(data_.data(), rows, cols);
}

MatrixView Tensor::channels() {
  if (rank() == 2) return matrix(shape_[0], shape_[1]);
  if (rank() != 3) throw ShapeError("channel view needs rank 2 or 3, got " + to_string(shape_));
  return matrix(shape_[0], shape_[1] * shape_[2]);
}

ConstMatrixView Tensor::channels() const {
  if (rank() == 2) return matrix(shape_[0], shape_[1]);
  if (rank() != 3) throw ShapeError("channel view needs rank 2 or 3, got " + to_string(shape_));
  return matrix(shape_[0], shape_[1] * shape_[2]);
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

}  // namespace tumordet
