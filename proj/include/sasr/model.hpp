#pragma once

#include "sasr/answer_head.hpp"
#include "sasr/feature_io.hpp"
#include "sasr/question_encoder.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sasr {

/// Everything the network's shape depends on, plus the ablation switches.
struct ModelConfig {
  Dims dims;
  Index question_vocab = 0;
  Index answer_count = 0;
  bool slt_on = true;
  bool sasr_on = true;
  bool sa_on = true;
  bool ta_on = true;
  bool layer_norm = false;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

/// All trainable state. Tensors are shared handles: the named() view aliases
/// the fields, so writes through either side are visible to both.
struct ModelParams {
  Tensor embed;  // V_q×D
  LstmParams lstm;
  Affine audio_proj;  // D_a→D
  Tensor token_bank;  // C×D
  SasrParams sasr;
  Affine spatial_out;        // 2D→D
  Affine match_clf;          // D→2
  Affine source_audio_clf;   // D→1
  Affine source_visual_clf;  // D→1
  Affine reg_clf;            // D→C
  HeadParams head;           // fuse 2D→D, out D→A

  /// Seeded uniform(-1/√fan_in, +1/√fan_in) weights, zero biases, all
  /// requiring grad. Layout depends only on the config dimensions.
  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  /// Stable name -> tensor listing covering every trainable tensor, in a
  /// fixed order shared by checkpoints and the optimizer.
  std::vector<NamedTensor> named() const;

  void zero_grads() const;
};

/// One sample's intermediate activations; fields stay invalid when their
/// producing stage is ablated away (except the streams noted below, which
/// always carry the effective values consumed downstream).
struct SampleForward {
  Tensor f_q;
  SourceAwareEmbeddings slt;   // effective f^s and token banks
  EnrichedEmbeddings enriched; // effective f^g and updated banks
  Tensor f_sa_visual;          // effective spatially attended stream
  SpatialOutputs spatial;      // weights/attended invalid when sa is off
  TemporalOutputs temporal;    // uniform weights when ta is off
  Prediction pred;
};

SampleForward forward_sample(Tape& tape, const ModelParams& mp, const ModelConfig& cfg,
                             const FeatureBundle& sample);

struct BatchLoss {
  LossBundle bundle;
  std::vector<Prediction> preds;
};

/// Mean per-sample answer loss plus the auxiliary terms: presence and match
/// losses averaged over the batch, the token regularizer applied once.
/// Ablated terms enter as constant zeros. The match loss pairs each sample's
/// audio with another sample's visual stream via a derangement seeded by
/// `negative_seed` (skipped for single-sample batches).
BatchLoss batch_loss(Tape& tape, const ModelParams& mp, const ModelConfig& cfg,
                     std::span<const FeatureBundle> batch, uint64_t negative_seed, Scalar lambda_source,
                     Scalar lambda_reg, Scalar lambda_match, std::vector<SampleForward>* forwards = nullptr);

}  // namespace sasr
