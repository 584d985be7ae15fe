#include "sasr/answer_head.hpp"

#include <cmath>
#include <string>

namespace sasr {

Prediction fuse_and_classify(Tape& t, Tensor pooled_audio, Tensor pooled_visual, Tensor f_g_audio,
                             Tensor f_g_visual, Tensor f_q, const HeadParams& p) {
  auto check_vec = [](const Tensor& v, const char* name, Index d) {
    if (v.rank() != 1 || (d > 0 && v.dim(0) != d))
      throw DimensionError(std::string("fuse_and_classify: ") + name + " shape " + shape_str(v.shape()) +
                           " is not a length-" + std::to_string(d) + " vector");
  };
  check_vec(pooled_audio, "pooled audio", 0);
  const Index d = pooled_audio.dim(0);
  check_vec(pooled_visual, "pooled visual", d);
  check_vec(f_q, "question vector", d);
  auto check_stream = [&](const Tensor& s, const char* name) {
    if (s.rank() != 2 || s.cols() != d)
      throw DimensionError(std::string("fuse_and_classify: ") + name + " shape " + shape_str(s.shape()) +
                           " does not match width " + std::to_string(d));
  };
  check_stream(f_g_audio, "audio stream");
  check_stream(f_g_visual, "visual stream");
  Tensor shortcut_a = add(t, pooled_audio, mean_axis(t, f_g_audio, 0));
  Tensor shortcut_v = add(t, pooled_visual, mean_axis(t, f_g_visual, 0));
  Tensor fused = apply_affine(t, p.fuse, tanh(t, concat_last_axis(t, shortcut_a, shortcut_v)));
  Prediction pred;
  pred.logits = apply_affine(t, p.out, tanh(t, mul(t, fused, f_q)));
  pred.probs = softmax_rows(t, pred.logits);
  Index best = 0;
  for (Index i = 1; i < pred.probs.size(); ++i)
    if (pred.probs(i) > pred.probs(best)) best = i;
  pred.answer_id = best;
  return pred;
}

Tensor loss_avqa(Tape& t, const Prediction& pred, Index answer_id) {
  if (!pred.logits.valid() || pred.logits.rank() != 1)
    throw ContractError("loss_avqa: prediction carries no logits");
  if (answer_id < 0 || answer_id >= pred.logits.size())
    throw ContractError("loss_avqa: answer id " + std::to_string(answer_id) + " outside vocabulary of " +
                        std::to_string(pred.logits.size()));
  const Index target[1] = {answer_id};
  return cross_entropy_rows(t, pred.logits, target);
}

LossBundle total_loss(Tape& t, Tensor avqa, Tensor source, Tensor reg, Tensor match, Scalar lambda_source,
                      Scalar lambda_reg, Scalar lambda_match) {
  auto check_part = [](const Tensor& x, const char* name) {
    if (!x.valid() || x.size() != 1)
      throw ContractError(std::string("total_loss: ") + name + " must be a scalar");
    if (!std::isfinite(x.value())) throw NumericAbortError(std::string(name) + " is not finite");
  };
  check_part(avqa, "l_avqa");
  check_part(source, "l_source");
  check_part(reg, "l_reg");
  check_part(match, "l_match");
  LossBundle b;
  b.avqa = avqa;
  b.source = source;
  b.reg = reg;
  b.match = match;
  b.lambda_source = lambda_source;
  b.lambda_reg = lambda_reg;
  b.lambda_match = lambda_match;
  b.total = add(t, avqa, scale(t, source, lambda_source));
  b.total = add(t, b.total, scale(t, reg, lambda_reg));
  b.total = add(t, b.total, scale(t, match, lambda_match));
  return b;
}

}  // namespace sasr
