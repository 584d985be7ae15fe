#pragma once

#include "sasr/checkpoint.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace sasr {

struct TrainConfig {
  Index batch_size = 16;
  Index epochs = 80;
  Scalar lr = 1e-4;
  Scalar decay_factor = 0.3;
  Index decay_every = 16;
  Scalar lambda_source = 0.5;
  Scalar lambda_reg = 0.5;
  Scalar lambda_match = 0.5;
  uint64_t seed = 42;
  bool slt_on = true;
  bool sasr_on = true;
  bool sa_on = true;
  bool ta_on = true;
  bool layer_norm = false;

  /// Throws ContractError on out-of-range values.
  void validate() const;
};

/// lr · decay_factor^floor(epoch / decay_every), exact repeated product.
Scalar lr_at(Index epoch, const TrainConfig& cfg);

/// Bias-corrected Adam (β₁=0.9, β₂=0.999, ε=1e-8). Moment buffers size
/// themselves to the parameter list on the first step and must see the same
/// list every step after.
class Adam {
 public:
  Adam(Scalar beta1 = 0.9, Scalar beta2 = 0.999, Scalar eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update over accumulated gradients; a parameter without a gradient
  /// buffer counts as zero gradient. Throws NumericAbortError naming the
  /// parameter on a non-finite gradient.
  void step(const std::vector<NamedTensor>& params, Scalar lr);

  int64_t steps() const { return step_; }

 private:
  std::vector<Array> m_, v_;
  int64_t step_ = 0;
  Scalar beta1_, beta2_, eps_;
};

struct TrainResult {
  int64_t steps = 0;
  std::string final_checkpoint;
  std::string metrics_path;
  std::vector<Scalar> step_totals;
};

/// Runs the full loop: seeded shuffles, full batches only (the trailing
/// partial batch is dropped), one metrics JSON line per step, one checkpoint
/// per epoch under out_dir. Numeric failures surface as NumericAbortError
/// with the global step in the message.
TrainResult train(const DatasetReader& data, const TrainConfig& cfg, const std::string& out_dir,
                  std::ostream* console = nullptr);

struct TemplateStat {
  Index correct = 0;
  Index total = 0;
};

struct EvalReport {
  Index n = 0;
  Index correct = 0;
  double accuracy = 0;
  std::map<char, TemplateStat> per_template;
};

/// Arg-max accuracy over the dataset, overall and per question template
/// (keyed by the sample id's template code). Pure inference, no recording.
EvalReport evaluate(const ModelParams& params, const ModelConfig& cfg, const DatasetReader& data);

}  // namespace sasr
