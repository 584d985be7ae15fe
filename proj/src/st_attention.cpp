#include "sasr/st_attention.hpp"

#include "sasr/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>
#include <utility>

namespace sasr {

SpatialOutputs spatial_attend(Tape& t, Tensor vis_map, Tensor f_g_audio, Tensor f_g_visual,
                              const Affine& out_map) {
  if (vis_map.rank() != 3)
    throw DimensionError("spatial_attend: want a rank-3 map, got " + shape_str(vis_map.shape()));
  const Index steps = vis_map.dim(0);
  const Index d = vis_map.dim(2);
  auto check_stream = [&](const Tensor& s, const char* name) {
    if (s.rank() != 2 || s.rows() != steps || s.cols() != d)
      throw DimensionError(std::string("spatial_attend: ") + name + " shape " + shape_str(s.shape()) +
                           " does not match map " + shape_str(vis_map.shape()));
  };
  check_stream(f_g_audio, "audio stream");
  check_stream(f_g_visual, "visual stream");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  std::vector<Tensor> weight_rows, attended_rows;
  weight_rows.reserve(static_cast<size_t>(steps));
  attended_rows.reserve(static_cast<size_t>(steps));
  for (Index i = 0; i < steps; ++i) {
    Tensor map_t = chip(t, vis_map, i);
    Tensor q = slice_rows(t, f_g_audio, i, 1);
    Tensor w = softmax_rows(t, scale(t, matmul(t, q, transpose(t, map_t)), inv_sqrt_d));
    weight_rows.push_back(w);
    attended_rows.push_back(matmul(t, w, map_t));
  }
  SpatialOutputs out;
  out.weights = concat_rows(t, std::move(weight_rows));
  out.attended = concat_rows(t, std::move(attended_rows));
  out.spatially_attended = apply_affine(t, out_map, tanh(t, concat_last_axis(t, f_g_visual, out.attended)));
  return out;
}

std::vector<size_t> make_negative_pair(size_t n, uint64_t seed) {
  if (n < 2) throw ContractError("make_negative_pair: need at least 2 samples, got " + std::to_string(n));
  std::vector<size_t> perm(n);
  std::iota(perm.begin(), perm.end(), size_t{0});
  Rng rng(seed);
  for (size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[static_cast<size_t>(rng.below(i))]);
  return perm;
}

Tensor loss_match(Tape& t, Tensor matched, Tensor mismatched, const Affine& clf) {
  if (matched.rank() != 2 || !shape_eq(matched.shape(), mismatched.shape()))
    throw DimensionError("loss_match: want equal rank-2 streams, got " + shape_str(matched.shape()) + " and " +
                         shape_str(mismatched.shape()));
  const Index steps = matched.rows();
  Tensor logits = apply_affine(t, clf, concat_rows(t, {matched, mismatched}));
  if (logits.cols() != 2)
    throw DimensionError("loss_match: classifier must map to 2 logits, got " + shape_str(logits.shape()));
  std::vector<Index> labels(static_cast<size_t>(2 * steps), 0);
  std::fill(labels.begin(), labels.begin() + steps, Index{1});
  return cross_entropy_rows(t, logits, labels);
}

namespace {

std::pair<Tensor, Tensor> pool_stream(Tape& t, Tensor q_row, Tensor stream, Scalar inv_sqrt_d) {
  Tensor w = softmax_rows(t, scale(t, matmul(t, q_row, transpose(t, stream)), inv_sqrt_d));
  Tensor pooled = reshape(t, matmul(t, w, stream), {stream.cols()});
  return {pooled, reshape(t, w, {stream.rows()})};
}

}  // namespace

TemporalOutputs temporal_attend(Tape& t, Tensor f_q, Tensor f_g_audio, Tensor f_sa_visual) {
  if (f_q.rank() != 1)
    throw DimensionError("temporal_attend: want a rank-1 question vector, got " + shape_str(f_q.shape()));
  const Index d = f_q.dim(0);
  auto check_stream = [&](const Tensor& s, const char* name) {
    if (s.rank() != 2 || s.cols() != d)
      throw DimensionError(std::string("temporal_attend: ") + name + " shape " + shape_str(s.shape()) +
                           " does not match question width " + std::to_string(d));
  };
  check_stream(f_g_audio, "audio stream");
  check_stream(f_sa_visual, "visual stream");
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  Tensor q_row = reshape(t, f_q, {1, d});
  TemporalOutputs out;
  std::tie(out.pooled_audio, out.weights_audio) = pool_stream(t, q_row, f_g_audio, inv_sqrt_d);
  std::tie(out.pooled_visual, out.weights_visual) = pool_stream(t, q_row, f_sa_visual, inv_sqrt_d);
  return out;
}

}  // namespace sasr
