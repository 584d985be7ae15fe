#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace sasr {

using Scalar = double;
using Index = Eigen::Index;
using Shape = std::vector<Index>;
using Array = Eigen::ArrayXd;
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

class Tape;

/// Shape/precondition violation in a tensor operation.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Violated API contract (non-scalar loss, out-of-range index, ...).
struct ContractError : std::runtime_error {
  explicit ContractError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite value at a point where training must stop; the message names
/// the offending term or parameter.
struct NumericAbortError : std::runtime_error {
  explicit NumericAbortError(const std::string& msg) : std::runtime_error(msg) {}
};

Index shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);
bool shape_eq(const Shape& a, const Shape& b);

/// Dense row-major tensor of 64-bit floats. Copies share storage; use
/// clone() for a deep copy. A tensor is either a leaf (parameter or
/// constant) or the output of an op recorded on a Tape. The gradient
/// buffer is allocated lazily on first accumulation and persists, adding
/// up across backward passes until zero_grad().
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Scalar v);
  static Tensor from(Shape shape, std::initializer_list<Scalar> v);
  static Tensor from(Shape shape, const Array& v);
  static Tensor scalar(Scalar v);

  bool valid() const { return impl_ != nullptr; }

  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index size() const { return impl_->values.size(); }
  Index dim(Index axis) const { return impl_->shape.at(static_cast<size_t>(axis)); }
  Index rows() const;
  Index cols() const;

  Array& values() { return impl_->values; }
  const Array& values() const { return impl_->values; }
  Scalar value() const;                  // scalar tensors only
  Scalar operator()(Index i) const { return impl_->values(i); }
  Scalar operator()(Index r, Index c) const { return impl_->values(r * cols() + c); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool rg);

  bool has_grad() const { return impl_ && impl_->grad.size() != 0; }
  /// Gradient buffer, allocated (zero-filled) on first use.
  Array& grad();
  const Array& grad() const;
  void zero_grad();

  /// Deep copy, detached from any tape.
  Tensor clone() const;

  const Tape* tape() const { return impl_->tape; }

  ConstMatrixMap matrix() const;                       // rank-2 view
  MatrixMap matrix_mut();
  ConstMatrixMap matrix_as(Index r, Index c) const;    // any view with r*c == size
  MatrixMap grad_matrix();                             // grad as rank-2
  MatrixMap grad_matrix_as(Index r, Index c);

  bool all_finite() const;

 private:
  struct Impl {
    Shape shape;
    Array values;
    Array grad;  // size 0 until first accumulation
    bool requires_grad = false;
    const Tape* tape = nullptr;
  };
  std::shared_ptr<Impl> impl_;

  friend class Tape;
};

}  // namespace sasr
