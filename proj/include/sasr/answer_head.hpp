#pragma once

#include "sasr/st_attention.hpp"

namespace sasr {

struct HeadParams {
  Affine fuse;  // 2D→D
  Affine out;   // D→A
};

struct Prediction {
  Tensor logits;        // A
  Tensor probs;         // A, sums to 1
  Index answer_id = 0;  // arg-max of probs, first index on ties
};

/// Shortcut fusion and classification. Each pooled modality vector is summed
/// with its stream's temporal mean, the two results are concatenated and
/// fused to a D-vector, gated by the question vector with an elementwise
/// product, and mapped to answer logits:
///   f_av = fuse(tanh([pooled_a + mean(f_g_a); pooled_v + mean(f_g_v)]))
///   logits = out(tanh(f_av ⊙ f_q))
Prediction fuse_and_classify(Tape& t, Tensor pooled_audio, Tensor pooled_visual, Tensor f_g_audio,
                             Tensor f_g_visual, Tensor f_q, const HeadParams& p);

/// -log probs[answer], computed from the logits in fused shift-stable form.
Tensor loss_avqa(Tape& t, const Prediction& pred, Index answer_id);

struct LossBundle {
  Tensor avqa;
  Tensor source;
  Tensor reg;
  Tensor match;
  Tensor total;
  Scalar lambda_source = 0.5;
  Scalar lambda_reg = 0.5;
  Scalar lambda_match = 0.5;
};

/// total = ((avqa + λ₁·source) + λ₂·reg) + λ₃·match, accumulated in that
/// order as autodiff nodes so one backward pass covers every term. A
/// non-finite part raises NumericAbortError naming the term.
LossBundle total_loss(Tape& t, Tensor avqa, Tensor source, Tensor reg, Tensor match, Scalar lambda_source,
                      Scalar lambda_reg, Scalar lambda_match);

}  // namespace sasr
