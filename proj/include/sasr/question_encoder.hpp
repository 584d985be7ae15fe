#pragma once

#include "sasr/tape.hpp"

namespace sasr {

/// LSTM cell weights; gate blocks are ordered input, forget, candidate,
/// output along the 4d axis.
struct LstmParams {
  Tensor w_ih;  // d_embed x 4d
  Tensor w_hh;  // d x 4d
  Tensor b;     // 4d
};

/// Embeds each token and runs a single-layer LSTM from the zero state;
/// returns the final hidden state as a [d] vector.
Tensor encode_question(Tape& t, std::span<const uint16_t> tokens, Tensor embedding, const LstmParams& p);

/// Per-segment affine map from raw audio width into model width:
/// [t x d_a] -> [t x d].
Tensor project_audio(Tape& t, Tensor audio_raw, Tensor w, Tensor b);

}  // namespace sasr
