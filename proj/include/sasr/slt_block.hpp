#pragma once

#include "sasr/affine.hpp"

namespace sasr {

/// Per-segment embeddings after joint self-attention with the token bank,
/// plus the two modality-specific token summaries derived from it.
struct SourceAwareEmbeddings {
  Tensor f_s_audio;      // T×D
  Tensor f_s_visual;     // T×D
  Tensor tokens_audio;   // C×D
  Tensor tokens_visual;  // C×D
};

/// S(f) = softmax(f·fᵀ/√D)·f over the rows of f [m×D]. No parameters.
Tensor self_attend(Tape& t, Tensor f);

/// Runs each timestep's segment vector jointly with the C bank tokens
/// through self_attend as a (1+C)×D sequence, splits the result back into
/// the segment row and per-timestep token rows, and averages the token rows
/// over T. Audio and visual streams are processed independently but share
/// the same input bank. An invalid bank handle means "no tokens": features
/// pass through unchanged and the token outputs stay invalid.
SourceAwareEmbeddings slt_forward(Tape& t, Tensor f_r_audio, Tensor f_r_visual, Tensor bank);

}  // namespace sasr
