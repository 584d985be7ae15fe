#include "sasr/sasr_block.hpp"

#include <cmath>
#include <numeric>
#include <vector>

namespace sasr {

Tensor cross_attend(Tape& t, Tensor a, Tensor b, const CrossAttnParams& p) {
  if (a.rank() != 2 || b.rank() != 2)
    throw DimensionError("cross_attend: want rank-2 inputs, got " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  Tensor q = apply_affine(t, p.query, a);
  Tensor k = linear(t, b, p.key_w);
  Tensor v = apply_affine(t, p.value, b);
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(q.cols()));
  Tensor w = softmax_rows(t, scale(t, matmul(t, q, transpose(t, k)), inv_sqrt_d));
  return matmul(t, w, v);
}

namespace {

void enrich_stream(Tape& t, Tensor f_s, Tensor bank, const SasrModalityParams& p, bool layer_norm, Tensor& f_g,
                   Tensor& tokens) {
  tokens = add(t, bank, apply_affine(t, p.token_out, cross_attend(t, bank, f_s, p.token_update)));
  if (layer_norm) tokens = layernorm_rows(t, tokens);
  f_g = apply_affine(t, p.feature_out, cross_attend(t, f_s, tokens, p.feature_enrich));
}

}  // namespace

EnrichedEmbeddings sasr_forward(Tape& t, const SourceAwareEmbeddings& src, const SasrParams& p) {
  if (!src.tokens_audio.valid() || !src.tokens_visual.valid())
    throw ContractError("sasr_forward: source-aware embeddings carry no tokens");
  EnrichedEmbeddings out;
  enrich_stream(t, src.f_s_audio, src.tokens_audio, p.audio, p.layer_norm, out.f_g_audio, out.tokens_audio);
  enrich_stream(t, src.f_s_visual, src.tokens_visual, p.visual, p.layer_norm, out.f_g_visual, out.tokens_visual);
  return out;
}

Tensor loss_source(Tape& t, Tensor tokens_audio, Tensor tokens_visual, std::span<const uint8_t> presence,
                   const Affine& audio_clf, const Affine& visual_clf) {
  if (tokens_audio.rank() != 2 || tokens_visual.rank() != 2 ||
      !shape_eq(tokens_audio.shape(), tokens_visual.shape()))
    throw DimensionError("loss_source: want equal rank-2 banks, got " + shape_str(tokens_audio.shape()) +
                         " and " + shape_str(tokens_visual.shape()));
  const Index c = tokens_audio.rows();
  if (static_cast<Index>(presence.size()) != c)
    throw ContractError("loss_source: presence length " + std::to_string(presence.size()) + " for " +
                        std::to_string(c) + " tokens");
  Tensor target = Tensor::zeros({c, 1});
  for (Index i = 0; i < c; ++i) target.values()(i) = presence[static_cast<size_t>(i)] ? 1.0 : 0.0;
  Tensor la = bce_with_logits_mean(t, apply_affine(t, audio_clf, tokens_audio), target);
  Tensor lv = bce_with_logits_mean(t, apply_affine(t, visual_clf, tokens_visual), target);
  return add(t, la, lv);
}

Tensor loss_reg(Tape& t, Tensor bank, const Affine& clf) {
  if (bank.rank() != 2) throw DimensionError("loss_reg: want a rank-2 bank, got " + shape_str(bank.shape()));
  Tensor logits = apply_affine(t, clf, bank);
  if (logits.cols() != bank.rows())
    throw DimensionError("loss_reg: classifier maps to " + std::to_string(logits.cols()) + " classes for " +
                         std::to_string(bank.rows()) + " tokens");
  std::vector<Index> labels(static_cast<size_t>(bank.rows()));
  std::iota(labels.begin(), labels.end(), Index{0});
  return cross_entropy_rows(t, logits, labels);
}

}  // namespace sasr
