#pragma once

#include "sasr/sasr_block.hpp"

#include <cstdint>
#include <vector>

namespace sasr {

struct SpatialOutputs {
  Tensor attended;            // T×P map summary per timestep -> T×D
  Tensor spatially_attended;  // T×D
  Tensor weights;             // T×P, each row sums to 1
};

/// Audio-guided localization. Position p at timestep t scores
/// dot(map[t][p], audio[t])/√D; a softmax over positions weights the
/// positional vectors into `attended`, which joins the visual stream as
/// spatially_attended[t] = affine(tanh([visual[t]; attended[t]])).
SpatialOutputs spatial_attend(Tape& t, Tensor vis_map, Tensor f_g_audio, Tensor f_g_visual,
                              const Affine& out_map);

/// Seeded cyclic permutation (Sattolo) of {0..n-1}, n >= 2; no index maps to
/// itself, so each audio stream pairs with a different sample's visual.
std::vector<size_t> make_negative_pair(size_t n, uint64_t seed);

/// Matched/mismatched discrimination: a shared D→2 map classifies all 2T
/// rows, matched rows labeled 1 and mismatched 0, mean cross-entropy.
Tensor loss_match(Tape& t, Tensor matched, Tensor mismatched, const Affine& clf);

struct TemporalOutputs {
  Tensor pooled_audio;    // D
  Tensor pooled_visual;   // D
  Tensor weights_audio;   // T, sums to 1
  Tensor weights_visual;  // T, sums to 1
};

/// Question-guided pooling over time: weights softmax(dot(f_q, row)/√D) per
/// modality; the visual stream is keyed and pooled on its spatially
/// attended features. No trainable parameters.
TemporalOutputs temporal_attend(Tape& t, Tensor f_q, Tensor f_g_audio, Tensor f_sa_visual);

}  // namespace sasr
