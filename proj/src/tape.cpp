#include "sasr/tape.hpp"

#include <algorithm>
#include <cmath>

namespace sasr {

Tensor Tape::record(const char* name, Tensor out, std::vector<Tensor> inputs, std::function<void()> backward) {
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const auto& in : inputs) inputs_finite = inputs_finite && in.all_finite();
  if (inputs_finite && !out.all_finite())
    throw ContractError(std::string(name) + ": non-finite output from finite inputs");
#endif
  bool rg = false;
  for (const auto& in : inputs) rg = rg || in.requires_grad();
  if (!grad_enabled || !rg) return out;
  if (consumed_) throw ContractError("tape already consumed; clear() before recording new ops");
  out.impl_->tape = this;
  out.impl_->requires_grad = true;
  ops_.push_back(Op{name, out, std::move(backward)});
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.valid() || loss.size() != 1) throw ContractError("backward: loss must be a scalar tensor");
  if (loss.tape() != this) throw ContractError("backward: loss was not recorded on this tape");
  if (consumed_) throw ContractError("backward: tape already consumed");
  consumed_ = true;
  Tensor l = loss;
  l.grad()(0) += 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    if (!it->output.has_grad()) continue;
    it->backward();
  }
}

void Tape::clear() {
  ops_.clear();
  consumed_ = false;
}

namespace {

MatrixMap as_matrix(Tensor& t, Index r, Index c) { return MatrixMap(t.values().data(), r, c); }

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (!shape_eq(a.shape(), b.shape()))
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

// Rank-1 tensors are treated as a single row; rank-2 as-is.
void row_view_dims(const char* op, const Tensor& x, Index& r, Index& c) {
  if (x.rank() == 1) {
    r = 1;
    c = x.dim(0);
  } else if (x.rank() == 2) {
    r = x.dim(0);
    c = x.dim(1);
  } else {
    throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_str(x.shape()));
  }
}

}  // namespace

Tensor matmul(Tape& t, Tensor a, Tensor b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  Tensor out = Tensor::zeros({a.rows(), b.cols()});
  as_matrix(out, a.rows(), b.cols()) = a.matrix() * b.matrix();
  return t.record("matmul", out, {a, b}, [a, b, out]() mutable {
    ConstMatrixMap g(out.grad().data(), out.rows(), out.cols());
    if (a.requires_grad()) a.grad_matrix() += g * b.matrix().transpose();
    if (b.requires_grad()) b.grad_matrix() += a.matrix().transpose() * g;
  });
}

Tensor transpose(Tape& t, Tensor a) {
  if (a.rank() != 2) throw DimensionError("transpose: expected rank 2, got " + shape_str(a.shape()));
  Tensor out = Tensor::zeros({a.cols(), a.rows()});
  as_matrix(out, a.cols(), a.rows()) = a.matrix().transpose();
  return t.record("transpose", out, {a}, [a, out]() mutable {
    if (a.requires_grad()) a.grad_matrix() += ConstMatrixMap(out.grad().data(), out.rows(), out.cols()).transpose();
  });
}

static Tensor linear_impl(Tape& t, Tensor x, Tensor w, Tensor b, bool has_bias) {
  if (x.rank() < 1) throw DimensionError("linear: input must have rank >= 1");
  Index din = x.dim(x.rank() - 1);
  if (w.rank() != 2 || w.rows() != din)
    throw DimensionError("linear: input trailing dim " + shape_str(x.shape()) + " does not match weight " + shape_str(w.shape()));
  Index dout = w.cols();
  if (has_bias && !(b.rank() == 1 && b.dim(0) == dout))
    throw DimensionError("linear: bias shape " + shape_str(b.shape()) + " does not match weight " + shape_str(w.shape()));
  Index n = x.size() / din;
  Shape oshape = x.shape();
  oshape.back() = dout;
  Tensor out = Tensor::zeros(oshape);
  MatrixMap y = as_matrix(out, n, dout);
  y = x.matrix_as(n, din) * w.matrix();
  if (has_bias) y.rowwise() += ConstMatrixMap(b.values().data(), 1, dout).row(0);
  std::vector<Tensor> inputs = has_bias ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
  return t.record("linear", out, std::move(inputs), [x, w, b, out, n, din, dout, has_bias]() mutable {
    ConstMatrixMap g(out.grad().data(), n, dout);
    if (x.requires_grad()) x.grad_matrix_as(n, din) += g * w.matrix().transpose();
    if (w.requires_grad()) w.grad_matrix() += x.matrix_as(n, din).transpose() * g;
    if (has_bias && b.requires_grad()) MatrixMap(b.grad().data(), 1, dout) += g.colwise().sum();
  });
}

Tensor linear(Tape& t, Tensor x, Tensor w, Tensor b) { return linear_impl(t, x, w, b, true); }

Tensor linear(Tape& t, Tensor x, Tensor w) { return linear_impl(t, x, w, Tensor(), false); }

Tensor softmax_rows(Tape& t, Tensor x) {
  Index r, c;
  row_view_dims("softmax_rows", x, r, c);
  Tensor out = Tensor::zeros(x.shape());
  for (Index i = 0; i < r; ++i) {
    auto xrow = x.values().segment(i * c, c);
    Array e = (xrow - xrow.maxCoeff()).exp();
    out.values().segment(i * c, c) = e / e.sum();
  }
  return t.record("softmax_rows", out, {x}, [x, out, r, c]() mutable {
    if (!x.requires_grad()) return;
    for (Index i = 0; i < r; ++i) {
      auto yrow = out.values().segment(i * c, c);
      auto grow = out.grad().segment(i * c, c);
      Scalar dot = (grow * yrow).sum();
      x.grad().segment(i * c, c) += yrow * (grow - dot);
    }
  });
}

Tensor tanh(Tape& t, Tensor x) {
  Tensor out = Tensor::zeros(x.shape());
  out.values() = x.values().tanh();
  return t.record("tanh", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad() * (1.0 - out.values().square());
  });
}

Tensor sigmoid(Tape& t, Tensor x) {
  Tensor out = Tensor::zeros(x.shape());
  out.values() = 0.5 * (0.5 * x.values()).tanh() + 0.5;
  return t.record("sigmoid", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad() * out.values() * (1.0 - out.values());
  });
}

Tensor add(Tape& t, Tensor a, Tensor b) {
  check_same_shape("add", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() + b.values();
  return t.record("add", out, {a, b}, [a, b, out]() mutable {
    if (a.requires_grad()) a.grad() += out.grad();
    if (b.requires_grad()) b.grad() += out.grad();
  });
}

Tensor mul(Tape& t, Tensor a, Tensor b) {
  check_same_shape("mul", a, b);
  Tensor out = Tensor::zeros(a.shape());
  out.values() = a.values() * b.values();
  return t.record("mul", out, {a, b}, [a, b, out]() mutable {
    if (a.requires_grad()) a.grad() += out.grad() * b.values();
    if (b.requires_grad()) b.grad() += out.grad() * a.values();
  });
}

Tensor scale(Tape& t, Tensor x, Scalar c) {
  Tensor out = Tensor::zeros(x.shape());
  out.values() = c * x.values();
  return t.record("scale", out, {x}, [x, out, c]() mutable {
    if (x.requires_grad()) x.grad() += c * out.grad();
  });
}

Tensor concat_last_axis(Tape& t, Tensor a, Tensor b) {
  if (a.rank() != b.rank() || a.rank() < 1)
    throw DimensionError("concat_last_axis: rank mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  for (Index i = 0; i + 1 < a.rank(); ++i)
    if (a.dim(i) != b.dim(i))
      throw DimensionError("concat_last_axis: leading dims differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Index la = a.dim(a.rank() - 1), lb = b.dim(b.rank() - 1);
  Index n = a.size() / la;
  Shape oshape = a.shape();
  oshape.back() = la + lb;
  Tensor out = Tensor::zeros(oshape);
  for (Index i = 0; i < n; ++i) {
    out.values().segment(i * (la + lb), la) = a.values().segment(i * la, la);
    out.values().segment(i * (la + lb) + la, lb) = b.values().segment(i * lb, lb);
  }
  return t.record("concat_last_axis", out, {a, b}, [a, b, out, n, la, lb]() mutable {
    for (Index i = 0; i < n; ++i) {
      if (a.requires_grad()) a.grad().segment(i * la, la) += out.grad().segment(i * (la + lb), la);
      if (b.requires_grad()) b.grad().segment(i * lb, lb) += out.grad().segment(i * (la + lb) + la, lb);
    }
  });
}

std::pair<Tensor, Tensor> split_last_axis(Tape& t, Tensor x, Index boundary) {
  if (x.rank() < 1) throw DimensionError("split_last_axis: input must have rank >= 1");
  Index last = x.dim(x.rank() - 1);
  if (boundary <= 0 || boundary >= last)
    throw DimensionError("split_last_axis: boundary " + std::to_string(boundary) + " outside (0, " + std::to_string(last) + ")");
  Index n = x.size() / last;
  Shape sa = x.shape(), sb = x.shape();
  sa.back() = boundary;
  sb.back() = last - boundary;
  Tensor a = Tensor::zeros(sa), b = Tensor::zeros(sb);
  Index lb = last - boundary;
  for (Index i = 0; i < n; ++i) {
    a.values().segment(i * boundary, boundary) = x.values().segment(i * last, boundary);
    b.values().segment(i * lb, lb) = x.values().segment(i * last + boundary, lb);
  }
  a = t.record("split_last_axis.left", a, {x}, [x, a, n, last, boundary]() mutable {
    if (!x.requires_grad()) return;
    for (Index i = 0; i < n; ++i) x.grad().segment(i * last, boundary) += a.grad().segment(i * boundary, boundary);
  });
  b = t.record("split_last_axis.right", b, {x}, [x, b, n, last, boundary, lb]() mutable {
    if (!x.requires_grad()) return;
    for (Index i = 0; i < n; ++i) x.grad().segment(i * last + boundary, lb) += b.grad().segment(i * lb, lb);
  });
  return {a, b};
}

Tensor mean_axis(Tape& t, Tensor x, Index axis) {
  if (x.rank() == 1) {
    if (axis != 0) throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for rank-1 input");
    Index n = x.size();
    Tensor out = Tensor::scalar(x.values().mean());
    return t.record("mean_axis", out, {x}, [x, out, n]() mutable {
      if (x.requires_grad()) x.grad() += out.grad()(0) / static_cast<Scalar>(n);
    });
  }
  if (x.rank() != 2 || (axis != 0 && axis != 1))
    throw DimensionError("mean_axis: unsupported axis " + std::to_string(axis) + " for shape " + shape_str(x.shape()));
  Index r = x.dim(0), c = x.dim(1);
  if (axis == 0) {
    Tensor out = Tensor::zeros({c});
    MatrixMap(out.values().data(), 1, c) = x.matrix().colwise().mean();
    return t.record("mean_axis", out, {x}, [x, out, r, c]() mutable {
      if (!x.requires_grad()) return;
      x.grad_matrix().rowwise() += (ConstMatrixMap(out.grad().data(), 1, c) / static_cast<Scalar>(r)).row(0);
    });
  }
  Tensor out = Tensor::zeros({r});
  MatrixMap(out.values().data(), r, 1) = x.matrix().rowwise().mean();
  return t.record("mean_axis", out, {x}, [x, out, r, c]() mutable {
    if (!x.requires_grad()) return;
    x.grad_matrix().colwise() += (ConstMatrixMap(out.grad().data(), r, 1) / static_cast<Scalar>(c)).col(0);
  });
}

Tensor sum_all(Tape& t, Tensor x) {
  Tensor out = Tensor::scalar(x.values().sum());
  return t.record("sum_all", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad()(0);
  });
}

Tensor concat_rows(Tape& t, std::vector<Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no parts");
  Index c = parts[0].dim(parts[0].rank() - 1);
  Index total = 0;
  for (const auto& p : parts) {
    Index pr, pc;
    row_view_dims("concat_rows", p, pr, pc);
    if (pc != c) throw DimensionError("concat_rows: column mismatch, " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    total += pr;
  }
  Tensor out = Tensor::zeros({total, c});
  Index at = 0;
  for (const auto& p : parts) {
    out.values().segment(at, p.size()) = p.values();
    at += p.size();
  }
  return t.record("concat_rows", out, parts, [parts, out]() mutable {
    Index at = 0;
    for (auto& p : parts) {
      if (p.requires_grad()) p.grad() += out.grad().segment(at, p.size());
      at += p.size();
    }
  });
}

Tensor slice_rows(Tape& t, Tensor x, Index start, Index count) {
  if (x.rank() != 2) throw DimensionError("slice_rows: expected rank 2, got " + shape_str(x.shape()));
  if (start < 0 || count < 1 || start + count > x.rows())
    throw DimensionError("slice_rows: rows [" + std::to_string(start) + ", " + std::to_string(start + count) +
                         ") outside " + shape_str(x.shape()));
  Index c = x.cols();
  Tensor out = Tensor::zeros({count, c});
  out.values() = x.values().segment(start * c, count * c);
  return t.record("slice_rows", out, {x}, [x, out, start, c]() mutable {
    if (x.requires_grad()) x.grad().segment(start * c, out.size()) += out.grad();
  });
}

Tensor chip(Tape& t, Tensor x, Index i) {
  if (x.rank() < 2) throw DimensionError("chip: expected rank >= 2, got " + shape_str(x.shape()));
  Index d0 = x.dim(0);
  if (i < 0 || i >= d0) throw DimensionError("chip: index " + std::to_string(i) + " outside leading dim " + std::to_string(d0));
  Index stride = x.size() / d0;
  Shape oshape(x.shape().begin() + 1, x.shape().end());
  Tensor out = Tensor::zeros(oshape);
  out.values() = x.values().segment(i * stride, stride);
  return t.record("chip", out, {x}, [x, out, i, stride]() mutable {
    if (x.requires_grad()) x.grad().segment(i * stride, stride) += out.grad();
  });
}

Tensor reshape(Tape& t, Tensor x, Shape shape) {
  if (shape_size(shape) != x.size())
    throw DimensionError("reshape: size of " + shape_str(shape) + " does not match " + shape_str(x.shape()));
  Tensor out = Tensor::from(std::move(shape), x.values());
  return t.record("reshape", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += out.grad();
  });
}

Tensor embed(Tape& t, Tensor table, std::span<const uint16_t> ids) {
  if (table.rank() != 2) throw DimensionError("embed: table must be rank 2, got " + shape_str(table.shape()));
  if (ids.empty()) throw ContractError("embed: empty id list");
  Index v = table.rows(), d = table.cols();
  for (uint16_t id : ids)
    if (id >= v) throw ContractError("embed: id " + std::to_string(id) + " outside vocabulary of " + std::to_string(v));
  Index l = static_cast<Index>(ids.size());
  Tensor out = Tensor::zeros({l, d});
  for (Index i = 0; i < l; ++i) out.values().segment(i * d, d) = table.values().segment(static_cast<Index>(ids[i]) * d, d);
  std::vector<uint16_t> owned(ids.begin(), ids.end());
  return t.record("embed", out, {table}, [table, out, owned, d]() mutable {
    if (!table.requires_grad()) return;
    for (size_t i = 0; i < owned.size(); ++i)
      table.grad().segment(static_cast<Index>(owned[i]) * d, d) += out.grad().segment(static_cast<Index>(i) * d, d);
  });
}

Tensor layernorm_rows(Tape& t, Tensor x, Scalar eps) {
  Index r, c;
  row_view_dims("layernorm_rows", x, r, c);
  if (eps <= 0) throw ContractError("layernorm_rows: eps must be positive");
  Tensor out = Tensor::zeros(x.shape());
  Array xhat(x.size());
  Array inv_sd(r);
  for (Index i = 0; i < r; ++i) {
    auto row = x.values().segment(i * c, c);
    Scalar mu = row.mean();
    Scalar var = (row - mu).square().mean();
    inv_sd(i) = Scalar(1) / std::sqrt(var + eps);
    xhat.segment(i * c, c) = (row - mu) * inv_sd(i);
  }
  out.values() = xhat;
  return t.record("layernorm_rows", out, {x}, [x, out, xhat, inv_sd, r, c]() mutable {
    if (!x.requires_grad()) return;
    for (Index i = 0; i < r; ++i) {
      auto g = out.grad().segment(i * c, c);
      auto xh = xhat.segment(i * c, c);
      Scalar gm = g.mean();
      Scalar gxm = (g * xh).mean();
      x.grad().segment(i * c, c) += inv_sd(i) * (g - gm - xh * gxm);
    }
  });
}

Tensor cross_entropy_rows(Tape& t, Tensor logits, std::span<const Index> targets) {
  Index n, k;
  row_view_dims("cross_entropy_rows", logits, n, k);
  if (static_cast<Index>(targets.size()) != n)
    throw DimensionError("cross_entropy_rows: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
  for (Index tgt : targets)
    if (tgt < 0 || tgt >= k) throw ContractError("cross_entropy_rows: target " + std::to_string(tgt) + " outside [0, " + std::to_string(k) + ")");
  Array probs(n * k);
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    auto xrow = logits.values().segment(i * k, k);
    Scalar m = xrow.maxCoeff();
    Array e = (xrow - m).exp();
    Scalar z = e.sum();
    probs.segment(i * k, k) = e / z;
    loss += m + std::log(z) - xrow(targets[static_cast<size_t>(i)]);
  }
  Tensor out = Tensor::scalar(loss / static_cast<Scalar>(n));
  std::vector<Index> owned(targets.begin(), targets.end());
  return t.record("cross_entropy_rows", out, {logits}, [logits, out, probs, owned, n, k]() mutable {
    if (!logits.requires_grad()) return;
    Scalar gy = out.grad()(0) / static_cast<Scalar>(n);
    for (Index i = 0; i < n; ++i) {
      logits.grad().segment(i * k, k) += gy * probs.segment(i * k, k);
      logits.grad()(i * k + owned[static_cast<size_t>(i)]) -= gy;
    }
  });
}

Tensor bce_with_logits_mean(Tape& t, Tensor logits, Tensor targets) {
  check_same_shape("bce_with_logits_mean", logits, targets);
  Index n = logits.size();
  Scalar loss = 0;
  for (Index i = 0; i < n; ++i) {
    Scalar z = logits(i), y = targets(i);
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor out = Tensor::scalar(loss / static_cast<Scalar>(n));
  return t.record("bce_with_logits_mean", out, {logits, targets}, [logits, targets, out, n]() mutable {
    Scalar gy = out.grad()(0) / static_cast<Scalar>(n);
    if (logits.requires_grad()) {
      Array sig = 0.5 * (0.5 * logits.values()).tanh() + 0.5;
      logits.grad() += gy * (sig - targets.values());
    }
    if (targets.requires_grad()) targets.grad() += gy * (-logits.values());
  });
}

}  // namespace sasr
