#include "sasr/model.hpp"

#include "sasr/rng.hpp"

#include <cmath>
#include <utility>

namespace sasr {

namespace {

Tensor uniform_tensor(Rng& rng, Shape shape, Scalar bound) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = rng.uniform(-bound, bound);
  t.set_requires_grad(true);
  return t;
}

Tensor zero_param(Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

Affine make_affine(Rng& rng, Index in, Index out) {
  Affine a;
  a.w = uniform_tensor(rng, {in, out}, Scalar(1) / std::sqrt(static_cast<Scalar>(in)));
  a.b = zero_param({out});
  return a;
}

CrossAttnParams make_cross(Rng& rng, Index d) {
  CrossAttnParams c;
  c.query = make_affine(rng, d, d);
  c.key_w = uniform_tensor(rng, {d, d}, Scalar(1) / std::sqrt(static_cast<Scalar>(d)));
  c.value = make_affine(rng, d, d);
  return c;
}

SasrModalityParams make_modality(Rng& rng, Index d) {
  SasrModalityParams m;
  m.token_update = make_cross(rng, d);
  m.token_out = make_affine(rng, d, d);
  m.feature_enrich = make_cross(rng, d);
  m.feature_out = make_affine(rng, d, d);
  return m;
}

void push_affine(std::vector<NamedTensor>& out, const std::string& prefix, const Affine& a) {
  out.push_back({prefix + ".w", a.w});
  out.push_back({prefix + ".b", a.b});
}

void push_cross(std::vector<NamedTensor>& out, const std::string& prefix, const CrossAttnParams& c) {
  push_affine(out, prefix + ".q", c.query);
  out.push_back({prefix + ".k.w", c.key_w});
  push_affine(out, prefix + ".v", c.value);
}

void push_modality(std::vector<NamedTensor>& out, const std::string& prefix, const SasrModalityParams& m) {
  push_cross(out, prefix + ".tok", m.token_update);
  push_affine(out, prefix + ".tok.out", m.token_out);
  push_cross(out, prefix + ".feat", m.feature_enrich);
  push_affine(out, prefix + ".feat.out", m.feature_out);
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& cfg, uint64_t seed) {
  if (cfg.question_vocab < 1 || cfg.answer_count < 1)
    throw ContractError("ModelParams::init: vocabulary sizes must be positive");
  const Index d = cfg.dims.d;
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(d));
  Rng rng(mix_seed(seed, 0x706172616d73ull));
  ModelParams p;
  p.embed = uniform_tensor(rng, {cfg.question_vocab, d}, inv_sqrt_d);
  p.lstm.w_ih = uniform_tensor(rng, {d, 4 * d}, inv_sqrt_d);
  p.lstm.w_hh = uniform_tensor(rng, {d, 4 * d}, inv_sqrt_d);
  p.lstm.b = zero_param({4 * d});
  p.audio_proj = make_affine(rng, cfg.dims.d_a, d);
  p.token_bank = uniform_tensor(rng, {cfg.dims.c, d}, inv_sqrt_d);
  p.sasr.audio = make_modality(rng, d);
  p.sasr.visual = make_modality(rng, d);
  p.sasr.layer_norm = cfg.layer_norm;
  p.spatial_out = make_affine(rng, 2 * d, d);
  p.match_clf = make_affine(rng, d, 2);
  p.source_audio_clf = make_affine(rng, d, 1);
  p.source_visual_clf = make_affine(rng, d, 1);
  p.reg_clf = make_affine(rng, d, cfg.dims.c);
  p.head.fuse = make_affine(rng, 2 * d, d);
  p.head.out = make_affine(rng, d, cfg.answer_count);
  return p;
}

std::vector<NamedTensor> ModelParams::named() const {
  std::vector<NamedTensor> out;
  out.reserve(49);
  out.push_back({"embed", embed});
  out.push_back({"lstm.w_ih", lstm.w_ih});
  out.push_back({"lstm.w_hh", lstm.w_hh});
  out.push_back({"lstm.b", lstm.b});
  push_affine(out, "audio_proj", audio_proj);
  out.push_back({"token_bank", token_bank});
  push_modality(out, "sasr.a", sasr.audio);
  push_modality(out, "sasr.v", sasr.visual);
  push_affine(out, "spatial", spatial_out);
  push_affine(out, "match", match_clf);
  push_affine(out, "src_a", source_audio_clf);
  push_affine(out, "src_v", source_visual_clf);
  push_affine(out, "reg", reg_clf);
  push_affine(out, "fuse", head.fuse);
  push_affine(out, "out", head.out);
  return out;
}

void ModelParams::zero_grads() const {
  for (auto& [name, tensor] : named()) tensor.zero_grad();
}

SampleForward forward_sample(Tape& tape, const ModelParams& mp, const ModelConfig& cfg,
                             const FeatureBundle& sample) {
  SampleForward fw;
  fw.f_q = encode_question(tape, sample.question_tokens, mp.embed, mp.lstm);
  Tensor f_r_audio = project_audio(tape, sample.audio_raw, mp.audio_proj.w, mp.audio_proj.b);

  if (cfg.slt_on) {
    fw.slt = slt_forward(tape, f_r_audio, sample.visual_vec, mp.token_bank);
  } else {
    fw.slt = {f_r_audio, sample.visual_vec, mp.token_bank, mp.token_bank};
  }

  if (cfg.sasr_on) {
    fw.enriched = sasr_forward(tape, fw.slt, mp.sasr);
  } else {
    fw.enriched = {fw.slt.f_s_audio, fw.slt.f_s_visual, fw.slt.tokens_audio, fw.slt.tokens_visual};
  }

  if (cfg.sa_on) {
    fw.spatial = spatial_attend(tape, sample.visual_map, fw.enriched.f_g_audio, fw.enriched.f_g_visual,
                                mp.spatial_out);
    fw.f_sa_visual = fw.spatial.spatially_attended;
  } else {
    fw.f_sa_visual = fw.enriched.f_g_visual;
  }

  if (cfg.ta_on) {
    fw.temporal = temporal_attend(tape, fw.f_q, fw.enriched.f_g_audio, fw.f_sa_visual);
  } else {
    const Index steps = fw.enriched.f_g_audio.rows();
    fw.temporal.pooled_audio = mean_axis(tape, fw.enriched.f_g_audio, 0);
    fw.temporal.pooled_visual = mean_axis(tape, fw.f_sa_visual, 0);
    fw.temporal.weights_audio = Tensor::full({steps}, Scalar(1) / static_cast<Scalar>(steps));
    fw.temporal.weights_visual = Tensor::full({steps}, Scalar(1) / static_cast<Scalar>(steps));
  }

  fw.pred = fuse_and_classify(tape, fw.temporal.pooled_audio, fw.temporal.pooled_visual, fw.enriched.f_g_audio,
                              fw.enriched.f_g_visual, fw.f_q, mp.head);
  return fw;
}

BatchLoss batch_loss(Tape& tape, const ModelParams& mp, const ModelConfig& cfg,
                     std::span<const FeatureBundle> batch, uint64_t negative_seed, Scalar lambda_source,
                     Scalar lambda_reg, Scalar lambda_match, std::vector<SampleForward>* forwards) {
  if (batch.empty()) throw ContractError("batch_loss: empty batch");
  const size_t n = batch.size();
  const Scalar inv_n = Scalar(1) / static_cast<Scalar>(n);

  std::vector<SampleForward> fws;
  fws.reserve(n);
  for (const FeatureBundle& s : batch) fws.push_back(forward_sample(tape, mp, cfg, s));

  BatchLoss out;
  out.preds.reserve(n);
  for (const SampleForward& fw : fws) out.preds.push_back(fw.pred);

  Tensor avqa;
  for (size_t i = 0; i < n; ++i) {
    Tensor term = loss_avqa(tape, fws[i].pred, static_cast<Index>(batch[i].answer_id));
    avqa = avqa.valid() ? add(tape, avqa, term) : term;
  }
  avqa = scale(tape, avqa, inv_n);

  Tensor source = Tensor::scalar(0);
  Tensor reg = Tensor::scalar(0);
  if (cfg.sasr_on) {
    Tensor src_sum;
    for (size_t i = 0; i < n; ++i) {
      Tensor term = loss_source(tape, fws[i].enriched.tokens_audio, fws[i].enriched.tokens_visual,
                                batch[i].source_presence, mp.source_audio_clf, mp.source_visual_clf);
      src_sum = src_sum.valid() ? add(tape, src_sum, term) : term;
    }
    source = scale(tape, src_sum, inv_n);
    reg = loss_reg(tape, mp.token_bank, mp.reg_clf);
  }

  Tensor match = Tensor::scalar(0);
  if (cfg.sa_on && n >= 2) {
    std::vector<size_t> pairing = make_negative_pair(n, negative_seed);
    Tensor match_sum;
    for (size_t i = 0; i < n; ++i) {
      const size_t j = pairing[i];
      Tensor mismatched = spatial_attend(tape, batch[j].visual_map, fws[i].enriched.f_g_audio,
                                         fws[j].enriched.f_g_visual, mp.spatial_out)
                              .spatially_attended;
      Tensor term = loss_match(tape, fws[i].f_sa_visual, mismatched, mp.match_clf);
      match_sum = match_sum.valid() ? add(tape, match_sum, term) : term;
    }
    match = scale(tape, match_sum, inv_n);
  }

  out.bundle = total_loss(tape, avqa, source, reg, match, lambda_source, lambda_reg, lambda_match);
  if (forwards) *forwards = std::move(fws);
  return out;
}

}  // namespace sasr
