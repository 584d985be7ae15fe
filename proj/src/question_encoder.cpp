#include "sasr/question_encoder.hpp"

namespace sasr {

Tensor encode_question(Tape& t, std::span<const uint16_t> tokens, Tensor embedding, const LstmParams& p) {
  if (tokens.empty()) throw ContractError("encode_question: empty question");
  if (p.w_ih.rank() != 2 || p.w_hh.rank() != 2 || p.w_ih.cols() != p.w_hh.cols() || p.w_ih.cols() % 4 != 0)
    throw DimensionError("encode_question: gate weights must be [d_embed x 4d] and [d x 4d], got " +
                         shape_str(p.w_ih.shape()) + " and " + shape_str(p.w_hh.shape()));
  Index d = p.w_hh.rows();
  if (p.w_hh.cols() != 4 * d || !(p.b.rank() == 1 && p.b.dim(0) == 4 * d))
    throw DimensionError("encode_question: recurrent weights " + shape_str(p.w_hh.shape()) + " and bias " +
                         shape_str(p.b.shape()) + " must agree on d");

  Tensor emb = embed(t, embedding, tokens);
  Tensor h = Tensor::zeros({d});
  Tensor c = Tensor::zeros({d});
  for (Index step = 0; step < static_cast<Index>(tokens.size()); ++step) {
    Tensor x = chip(t, emb, step);
    Tensor z = add(t, linear(t, x, p.w_ih, p.b), linear(t, h, p.w_hh));
    Tensor gates = reshape(t, z, {4, d});
    Tensor in_gate = sigmoid(t, chip(t, gates, 0));
    Tensor forget_gate = sigmoid(t, chip(t, gates, 1));
    Tensor candidate = tanh(t, chip(t, gates, 2));
    Tensor out_gate = sigmoid(t, chip(t, gates, 3));
    c = add(t, mul(t, forget_gate, c), mul(t, in_gate, candidate));
    h = mul(t, out_gate, tanh(t, c));
  }
  return h;
}

Tensor project_audio(Tape& t, Tensor audio_raw, Tensor w, Tensor b) {
  if (audio_raw.rank() != 2)
    throw DimensionError("project_audio: expected [t x d_a] input, got " + shape_str(audio_raw.shape()));
  return linear(t, audio_raw, w, b);
}

}  // namespace sasr
