#pragma once

#include "sasr/slt_block.hpp"

#include <cstdint>
#include <span>

namespace sasr {

/// Query, key, and value maps for one cross-attention site. Each site owns
/// its own three maps. The key map carries no bias: a shared shift on every
/// key moves each score row by the same constant, which the row softmax
/// cancels, so a key bias could never receive gradient.
struct CrossAttnParams {
  Affine query;
  Tensor key_w;
  Affine value;
};

/// CrossAttn(a, b) = softmax(FC_q(a)·FC_k(b)ᵀ/√D)·FC_v(b), rows of a as
/// queries, rows of b as keys and values.
Tensor cross_attend(Tape& t, Tensor a, Tensor b, const CrossAttnParams& p);

/// One modality's enrichment parameters: tokens attend to features (applied
/// through token_out with a residual), then features attend to the updated
/// tokens (through feature_out, no residual).
struct SasrModalityParams {
  CrossAttnParams token_update;
  Affine token_out;
  CrossAttnParams feature_enrich;
  Affine feature_out;
};

struct SasrParams {
  SasrModalityParams audio;
  SasrModalityParams visual;
  /// When set, each residually updated token bank is row-standardized.
  bool layer_norm = false;
};

struct EnrichedEmbeddings {
  Tensor f_g_audio;      // T×D
  Tensor f_g_visual;     // T×D
  Tensor tokens_audio;   // C×D, residually updated
  Tensor tokens_visual;  // C×D
};

EnrichedEmbeddings sasr_forward(Tape& t, const SourceAwareEmbeddings& src, const SasrParams& p);

/// Per-token presence supervision: each modality's updated bank maps to one
/// logit per token (shared D→1 map per modality) and is scored against the
/// multi-hot presence vector with mean binary cross-entropy; the two
/// modality losses are summed.
Tensor loss_source(Tape& t, Tensor tokens_audio, Tensor tokens_visual, std::span<const uint8_t> presence,
                   const Affine& audio_clf, const Affine& visual_clf);

/// Keeps bank tokens mutually distinguishable: classify token i to class i
/// through a shared D→C map, mean cross-entropy over the C tokens.
Tensor loss_reg(Tape& t, Tensor bank, const Affine& clf);

}  // namespace sasr
