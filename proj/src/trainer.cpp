#include "sasr/trainer.hpp"

#include "sasr/rng.hpp"
#include "sasr/synth_gen.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace sasr {

namespace {

constexpr uint64_t kShuffleTag = 0x73687566666c65ull;
constexpr uint64_t kNegativeTag = 0x6e65676174697665ull;

std::string dims_str(const Dims& d) {
  return "t=" + std::to_string(d.t) + " p=" + std::to_string(d.p) + " l_max=" + std::to_string(d.l_max) +
         " d_a=" + std::to_string(d.d_a) + " d=" + std::to_string(d.d) + " c=" + std::to_string(d.c);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ContractError("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw ContractError("TrainConfig: epochs must be >= 0");
  if (!(lr > 0)) throw ContractError("TrainConfig: lr must be positive");
  if (!(decay_factor > 0 && decay_factor <= 1)) throw ContractError("TrainConfig: decay_factor must be in (0, 1]");
  if (decay_every < 1) throw ContractError("TrainConfig: decay_every must be >= 1");
  if (lambda_source < 0 || lambda_reg < 0 || lambda_match < 0)
    throw ContractError("TrainConfig: loss weights must be non-negative");
}

Scalar lr_at(Index epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_at: epoch must be >= 0");
  Scalar f = 1;
  for (Index k = 0, steps = epoch / cfg.decay_every; k < steps; ++k) f *= cfg.decay_factor;
  return cfg.lr * f;
}

void Adam::step(const std::vector<NamedTensor>& params, Scalar lr) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& [name, tensor] : params) {
      m_.push_back(Array::Zero(tensor.size()));
      v_.push_back(Array::Zero(tensor.size()));
    }
  }
  if (m_.size() != params.size())
    throw ContractError("Adam: parameter list changed size, " + std::to_string(params.size()) + " vs " +
                        std::to_string(m_.size()));
  ++step_;
  const Scalar bc1 = Scalar(1) - std::pow(beta1_, static_cast<Scalar>(step_));
  const Scalar bc2 = Scalar(1) - std::pow(beta2_, static_cast<Scalar>(step_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (m_[i].size() != p.size())
      throw ContractError("Adam: parameter " + params[i].name + " changed shape");
    if (p.has_grad()) {
      const Array& g = p.grad();
      if (!g.isFinite().all())
        throw NumericAbortError("gradient for " + params[i].name + " is not finite");
      m_[i] = beta1_ * m_[i] + (Scalar(1) - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (Scalar(1) - beta2_) * g.square();
    } else {
      m_[i] *= beta1_;
      v_[i] *= beta2_;
    }
    p.values() -= lr * (m_[i] / bc1) / ((v_[i] / bc2).sqrt() + eps_);
  }
}

TrainResult train(const DatasetReader& data, const TrainConfig& cfg, const std::string& out_dir,
                  std::ostream* console) {
  cfg.validate();
  const DatasetManifest& man = data.manifest();
  const Index n_batches = data.size() / cfg.batch_size;
  if (n_batches < 1)
    throw ContractError("train: dataset of " + std::to_string(data.size()) + " samples is smaller than one batch of " +
                        std::to_string(cfg.batch_size));

  ModelConfig mc;
  mc.dims = man.dims;
  mc.question_vocab = static_cast<Index>(man.question_vocab_size);
  mc.answer_count = static_cast<Index>(man.answer_vocab.size());
  mc.slt_on = cfg.slt_on;
  mc.sasr_on = cfg.sasr_on;
  mc.sa_on = cfg.sa_on;
  mc.ta_on = cfg.ta_on;
  mc.layer_norm = cfg.layer_norm;

  ModelParams params = ModelParams::init(mc, cfg.seed);
  std::vector<NamedTensor> named = params.named();
  Adam adam;

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.metrics_path = out_dir + "/metrics.jsonl";
  std::ofstream metrics(result.metrics_path, std::ios::trunc);
  if (!metrics) throw IoError("cannot open " + result.metrics_path + " for writing");

  std::vector<Index> order(static_cast<size_t>(data.size()));
  std::vector<FeatureBundle> batch(static_cast<size_t>(cfg.batch_size));
  int64_t step = 0;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Scalar lr = lr_at(epoch, cfg);
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);
    Rng shuffle_rng(mix_seed(mix_seed(cfg.seed, kShuffleTag), static_cast<uint64_t>(epoch)));
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<size_t>(shuffle_rng.below(i))]);

    const auto epoch_start = std::chrono::steady_clock::now();
    Scalar epoch_loss = 0;
    for (Index b = 0; b < n_batches; ++b) {
      for (Index k = 0; k < cfg.batch_size; ++k)
        batch[static_cast<size_t>(k)] = data.load(order[static_cast<size_t>(b * cfg.batch_size + k)]);
      Tape tape;
      try {
        BatchLoss loss = batch_loss(tape, params, mc, batch,
                                    mix_seed(mix_seed(cfg.seed, kNegativeTag), static_cast<uint64_t>(step)),
                                    cfg.lambda_source, cfg.lambda_reg, cfg.lambda_match);
        tape.backward(loss.bundle.total);
        adam.step(named, lr);
        const nlohmann::json line{
            {"step", step},
            {"epoch", epoch},
            {"lr", lr},
            {"l_avqa", loss.bundle.avqa.value()},
            {"l_source", loss.bundle.source.value()},
            {"l_reg", loss.bundle.reg.value()},
            {"l_match", loss.bundle.match.value()},
            {"total", loss.bundle.total.value()},
        };
        metrics << line.dump() << '\n';
        result.step_totals.push_back(loss.bundle.total.value());
        epoch_loss += loss.bundle.total.value();
      } catch (const NumericAbortError& e) {
        throw NumericAbortError("step " + std::to_string(step) + ": " + e.what());
      }
      params.zero_grads();
      ++step;
    }
    metrics.flush();
    if (!metrics) throw IoError("failed writing " + result.metrics_path);

    char name[32];
    std::snprintf(name, sizeof(name), "epoch_%04lld.ckpt", static_cast<long long>(epoch + 1));
    result.final_checkpoint = out_dir + "/" + name;
    save_checkpoint(result.final_checkpoint, params, mc, step, epoch + 1, cfg.seed);

    if (console) {
      const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                            epoch_start)
                          .count();
      *console << "epoch " << (epoch + 1) << "/" << cfg.epochs << "  lr " << lr << "  mean loss "
               << (epoch_loss / static_cast<Scalar>(n_batches)) << "  (" << ms << " ms)\n";
      console->flush();
    }
  }
  result.steps = step;
  return result;
}

EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const DatasetReader& data) {
  const DatasetManifest& man = data.manifest();
  if (!(man.dims == cfg.dims))
    throw ContractError("evaluate: dataset dims (" + dims_str(man.dims) + ") do not match checkpoint dims (" +
                        dims_str(cfg.dims) + ")");
  if (static_cast<Index>(man.question_vocab_size) != cfg.question_vocab ||
      static_cast<Index>(man.answer_vocab.size()) != cfg.answer_count)
    throw ContractError("evaluate: dataset vocabulary (" + std::to_string(man.question_vocab_size) + " words, " +
                        std::to_string(man.answer_vocab.size()) + " answers) does not match checkpoint (" +
                        std::to_string(cfg.question_vocab) + " words, " + std::to_string(cfg.answer_count) +
                        " answers)");

  EvalReport report;
  for (Index i = 0; i < data.size(); ++i) {
    FeatureBundle sample = data.load(i);
    Tape tape;
    tape.grad_enabled = false;
    SampleForward fw = forward_sample(tape, params, cfg, sample);
    const bool hit = fw.pred.answer_id == static_cast<Index>(sample.answer_id);
    char code = '?';
    try {
      code = template_code(template_of(sample.sample_id));
    } catch (const ContractError&) {
    }
    auto& stat = report.per_template[code];
    ++stat.total;
    ++report.n;
    if (hit) {
      ++stat.correct;
      ++report.correct;
    }
  }
  report.accuracy = report.n ? static_cast<double>(report.correct) / static_cast<double>(report.n) : 0.0;
  return report;
}

}  // namespace sasr
