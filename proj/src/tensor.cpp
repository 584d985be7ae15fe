#include "sasr/tensor.hpp"

#include <sstream>

namespace sasr {

Index shape_size(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

static void check_shape(const Shape& shape) {
  for (Index d : shape) {
    if (d <= 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape shape) {
  check_shape(shape);
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->values = Array::Zero(shape_size(shape));
  t.impl_->shape = std::move(shape);
  return t;
}

Tensor Tensor::full(Shape shape, Scalar v) {
  Tensor t = zeros(std::move(shape));
  t.impl_->values.setConstant(v);
  return t;
}

Tensor Tensor::from(Shape shape, std::initializer_list<Scalar> v) {
  check_shape(shape);
  if (shape_size(shape) != static_cast<Index>(v.size()))
    throw DimensionError("value count " + std::to_string(v.size()) + " does not match shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape));
  Index i = 0;
  for (Scalar s : v) t.impl_->values(i++) = s;
  return t;
}

Tensor Tensor::from(Shape shape, const Array& v) {
  check_shape(shape);
  if (shape_size(shape) != v.size())
    throw DimensionError("value count " + std::to_string(v.size()) + " does not match shape " + shape_str(shape));
  Tensor t = zeros(std::move(shape));
  t.impl_->values = v;
  return t;
}

Tensor Tensor::scalar(Scalar v) {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = {};
  t.impl_->values = Array::Constant(1, v);
  return t;
}

Index Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not rank-2, shape " + shape_str(shape()));
  return impl_->shape[0];
}

Index Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not rank-2, shape " + shape_str(shape()));
  return impl_->shape[1];
}

Scalar Tensor::value() const {
  if (size() != 1) throw ContractError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return impl_->values(0);
}

Tensor& Tensor::set_requires_grad(bool rg) {
  impl_->requires_grad = rg;
  return *this;
}

Array& Tensor::grad() {
  if (impl_->grad.size() == 0) impl_->grad = Array::Zero(impl_->values.size());
  return impl_->grad;
}

const Array& Tensor::grad() const {
  if (impl_->grad.size() == 0) throw ContractError("grad(): gradient not allocated");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && impl_->grad.size() != 0) impl_->grad.setZero();
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->values = impl_->values;
  t.impl_->requires_grad = impl_->requires_grad;
  return t;
}

ConstMatrixMap Tensor::matrix() const { return ConstMatrixMap(impl_->values.data(), rows(), cols()); }

MatrixMap Tensor::matrix_mut() { return MatrixMap(impl_->values.data(), rows(), cols()); }

ConstMatrixMap Tensor::matrix_as(Index r, Index c) const {
  if (r * c != size())
    throw DimensionError("matrix_as(" + std::to_string(r) + "," + std::to_string(c) + "): size mismatch for shape " + shape_str(shape()));
  return ConstMatrixMap(impl_->values.data(), r, c);
}

MatrixMap Tensor::grad_matrix() { return MatrixMap(grad().data(), rows(), cols()); }

MatrixMap Tensor::grad_matrix_as(Index r, Index c) {
  if (r * c != size()) throw DimensionError("grad_matrix_as: size mismatch");
  return MatrixMap(grad().data(), r, c);
}

bool Tensor::all_finite() const { return impl_->values.isFinite().all(); }

}  // namespace sasr
