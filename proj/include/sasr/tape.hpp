#pragma once

#include "sasr/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

namespace sasr {

/// Records the forward graph of tensor ops and replays their backward rules
/// in reverse order. One backward() per recording; clear() resets the tape
/// for the next forward pass. Gradients accumulate additively into each
/// tensor's grad buffer and are only cleared by explicit zero_grad().
class Tape {
 public:
  /// Registers an op. The output tensor is stamped with this tape and marked
  /// requires_grad when any input requires grad; ops with no differentiable
  /// input are not recorded. Returns the output for chaining.
  Tensor record(const char* name, Tensor out, std::vector<Tensor> inputs, std::function<void()> backward);

  /// Propagates d(loss)/d(tensor) into grad buffers for every tensor that
  /// contributed to the scalar loss. May be called once per recording.
  void backward(const Tensor& loss);

  /// Drops all recorded ops and re-arms backward().
  void clear();

  size_t op_count() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

  /// When false, ops still compute values but nothing is recorded (used for
  /// evaluation passes).
  bool grad_enabled = true;

 private:
  struct Op {
    const char* name;
    Tensor output;
    std::function<void()> backward;
  };
  std::vector<Op> ops_;
  bool consumed_ = false;
};

// Every op validates shapes up front and throws DimensionError naming the
// offending shapes. All accept finite inputs of 64-bit floats.

/// C[m×n] = A[m×k] · B[k×n].
Tensor matmul(Tape& t, Tensor a, Tensor b);

/// B[n×m] = Aᵀ for A[m×n].
Tensor transpose(Tape& t, Tensor a);

/// y = x·W + b where x has trailing dim d_in (any leading dims), W is
/// [d_in×d_out], b is [d_out] broadcast over leading dims.
Tensor linear(Tape& t, Tensor x, Tensor w, Tensor b);

/// y = x·W without bias; same broadcasting as linear.
Tensor linear(Tape& t, Tensor x, Tensor w);

/// Row-wise softmax with max-subtraction. Rank-1 input is one row.
Tensor softmax_rows(Tape& t, Tensor x);

Tensor tanh(Tape& t, Tensor x);
Tensor sigmoid(Tape& t, Tensor x);

/// Elementwise ops over equal shapes.
Tensor add(Tape& t, Tensor a, Tensor b);
Tensor mul(Tape& t, Tensor a, Tensor b);

/// y = c·x for a compile-time-constant scalar c (not differentiated in c).
Tensor scale(Tape& t, Tensor x, Scalar c);

/// Concatenate along the last axis; all other dims must agree.
Tensor concat_last_axis(Tape& t, Tensor a, Tensor b);

/// Inverse of concat_last_axis at the given boundary (0 < boundary < last dim).
std::pair<Tensor, Tensor> split_last_axis(Tape& t, Tensor x, Index boundary);

/// Mean along one axis. Rank-2 with axis 0 → [cols], axis 1 → [rows];
/// rank-1 with axis 0 → scalar.
Tensor mean_axis(Tape& t, Tensor x, Index axis);

/// Sum of all entries → scalar.
Tensor sum_all(Tape& t, Tensor x);

/// Stack rank-2 [rᵢ×c] (or rank-1 [c], read as one row) parts into [Σrᵢ×c].
Tensor concat_rows(Tape& t, std::vector<Tensor> parts);

/// Rows [start, start+count) of a rank-2 tensor.
Tensor slice_rows(Tape& t, Tensor x, Index start, Index count);

/// Index the leading axis: rank-k input → rank-(k-1) slab.
Tensor chip(Tape& t, Tensor x, Index i);

/// Same data, new shape (sizes must agree).
Tensor reshape(Tape& t, Tensor x, Shape shape);

/// Rows of `table` gathered by id; backward scatter-adds into the table.
Tensor embed(Tape& t, Tensor table, std::span<const uint16_t> ids);

/// Standardizes each row to mean 0 and unit variance (biased, eps-guarded).
/// Rank-1 input is one row. No trainable gain or bias; adjacent affine maps
/// can absorb both.
Tensor layernorm_rows(Tape& t, Tensor x, Scalar eps = 1e-5);

/// Mean over rows of -log softmax(logits)[target]; fused and shift-stable.
Tensor cross_entropy_rows(Tape& t, Tensor logits, std::span<const Index> targets);

/// Mean over all coordinates of the binary cross entropy between
/// sigmoid(logits) and targets (same shape, values in [0,1]), computed in
/// the numerically stable log-sum-exp form.
Tensor bce_with_logits_mean(Tape& t, Tensor logits, Tensor targets);

}  // namespace sasr
