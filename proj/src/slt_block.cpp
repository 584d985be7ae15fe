#include "sasr/slt_block.hpp"

#include <cmath>
#include <tuple>
#include <utility>

namespace sasr {

Tensor self_attend(Tape& t, Tensor f) {
  if (f.rank() != 2)
    throw DimensionError("self_attend: want a rank-2 input, got " + shape_str(f.shape()));
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(f.cols()));
  Tensor scores = scale(t, matmul(t, f, transpose(t, f)), inv_sqrt_d);
  return matmul(t, softmax_rows(t, scores), f);
}

namespace {

std::pair<Tensor, Tensor> attend_stream(Tape& t, Tensor f_r, Tensor bank) {
  const Index steps = f_r.rows();
  const Index c = bank.rows();
  std::vector<Tensor> segment_rows;
  segment_rows.reserve(static_cast<size_t>(steps));
  Tensor token_sum;
  for (Index i = 0; i < steps; ++i) {
    Tensor mixed = self_attend(t, concat_rows(t, {slice_rows(t, f_r, i, 1), bank}));
    segment_rows.push_back(slice_rows(t, mixed, 0, 1));
    Tensor toks = slice_rows(t, mixed, 1, c);
    token_sum = token_sum.valid() ? add(t, token_sum, toks) : toks;
  }
  Tensor f_s = concat_rows(t, std::move(segment_rows));
  Tensor tokens = scale(t, token_sum, Scalar(1) / static_cast<Scalar>(steps));
  return {f_s, tokens};
}

}  // namespace

SourceAwareEmbeddings slt_forward(Tape& t, Tensor f_r_audio, Tensor f_r_visual, Tensor bank) {
  if (f_r_audio.rank() != 2 || f_r_visual.rank() != 2 || !shape_eq(f_r_audio.shape(), f_r_visual.shape()))
    throw DimensionError("slt_forward: want equal rank-2 streams, got " + shape_str(f_r_audio.shape()) +
                         " and " + shape_str(f_r_visual.shape()));
  if (!bank.valid()) return {f_r_audio, f_r_visual, Tensor(), Tensor()};
  if (bank.rank() != 2 || bank.cols() != f_r_audio.cols())
    throw DimensionError("slt_forward: bank " + shape_str(bank.shape()) + " does not match stream width " +
                         std::to_string(f_r_audio.cols()));
  SourceAwareEmbeddings out;
  std::tie(out.f_s_audio, out.tokens_audio) = attend_stream(t, f_r_audio, bank);
  std::tie(out.f_s_visual, out.tokens_visual) = attend_stream(t, f_r_visual, bank);
  return out;
}

}  // namespace sasr
