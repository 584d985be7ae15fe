#include "CLI11.hpp"

#include "sasr/checkpoint.hpp"
#include "sasr/grad_check.hpp"
#include "sasr/rng.hpp"
#include "sasr/synth_gen.hpp"
#include "sasr/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using namespace sasr;
using nlohmann::json;

constexpr int kOkExit = 0;
constexpr int kConfigExit = 2;
constexpr int kIoExit = 3;
constexpr int kNumericExit = 4;
constexpr int kGradExit = 5;

struct CliError : std::runtime_error {
  int code;
  CliError(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
};

/// Values read from a --config JSON file; every field is optional and loses
/// to an explicit flag.
struct FileConfig {
  std::optional<int64_t> n, batch_size, epochs, decay_every;
  std::optional<uint64_t> seed;
  std::optional<double> noise_sigma, lr, decay_factor;
  std::optional<double> lambda_source, lambda_reg, lambda_match;
  std::optional<bool> slt_on, sasr_on, sa_on, ta_on, layer_norm;
  std::optional<Dims> dims;
  std::optional<std::string> data, out, ckpt;
};

Dims parse_dims(const json& j) {
  if (!j.is_object()) throw CliError(kConfigExit, "config: \"dims\" must be an object");
  Dims d;
  for (const auto& [key, val] : j.items()) {
    if (key == "t")
      d.t = val.get<Index>();
    else if (key == "p")
      d.p = val.get<Index>();
    else if (key == "l_max")
      d.l_max = val.get<Index>();
    else if (key == "d_a")
      d.d_a = val.get<Index>();
    else if (key == "d")
      d.d = val.get<Index>();
    else if (key == "c")
      d.c = val.get<Index>();
    else
      throw CliError(kConfigExit, "config: unknown key \"dims." + key + "\"");
  }
  return d;
}

FileConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CliError(kIoExit, "cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw CliError(kConfigExit, "config " + path + ": " + e.what());
  }
  if (!j.is_object()) throw CliError(kConfigExit, "config " + path + ": top level must be an object");
  FileConfig fc;
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "n")
        fc.n = val.get<int64_t>();
      else if (key == "seed")
        fc.seed = val.get<uint64_t>();
      else if (key == "noise_sigma")
        fc.noise_sigma = val.get<double>();
      else if (key == "batch_size")
        fc.batch_size = val.get<int64_t>();
      else if (key == "epochs")
        fc.epochs = val.get<int64_t>();
      else if (key == "lr")
        fc.lr = val.get<double>();
      else if (key == "decay_factor")
        fc.decay_factor = val.get<double>();
      else if (key == "decay_every")
        fc.decay_every = val.get<int64_t>();
      else if (key == "lambda_source")
        fc.lambda_source = val.get<double>();
      else if (key == "lambda_reg")
        fc.lambda_reg = val.get<double>();
      else if (key == "lambda_match")
        fc.lambda_match = val.get<double>();
      else if (key == "slt_on")
        fc.slt_on = val.get<bool>();
      else if (key == "sasr_on")
        fc.sasr_on = val.get<bool>();
      else if (key == "sa_on")
        fc.sa_on = val.get<bool>();
      else if (key == "ta_on")
        fc.ta_on = val.get<bool>();
      else if (key == "layer_norm")
        fc.layer_norm = val.get<bool>();
      else if (key == "dims")
        fc.dims = parse_dims(val);
      else if (key == "data")
        fc.data = val.get<std::string>();
      else if (key == "out")
        fc.out = val.get<std::string>();
      else if (key == "ckpt")
        fc.ckpt = val.get<std::string>();
      else
        throw CliError(kConfigExit, "config " + path + ": unknown key \"" + key + "\"");
    }
  } catch (const json::exception& e) {
    throw CliError(kConfigExit, "config " + path + ": " + e.what());
  }
  return fc;
}

FileConfig maybe_config(const CLI::App* cmd, const std::string& path) {
  if (cmd->count("--config")) return read_config(path);
  return {};
}

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("SASR_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  errno = 0;
  unsigned long long v = std::strtoull(s, &end, 10);
  if (errno != 0 || end == s || *end != '\0')
    throw CliError(kConfigExit, std::string("SASR_SEED is not an unsigned integer: ") + s);
  return v;
}

/// flag > config file > built-in default.
template <typename T, typename U>
T pick(const CLI::App* cmd, const std::string& flag, T flag_value, const std::optional<U>& file_value,
       T fallback) {
  if (cmd->count(flag)) return flag_value;
  if (file_value) return static_cast<T>(*file_value);
  return fallback;
}

/// flag > SASR_SEED env > config file > built-in default.
uint64_t pick_seed(const CLI::App* cmd, uint64_t flag_value, const FileConfig& fc, uint64_t fallback) {
  if (cmd->count("--seed")) return flag_value;
  if (auto env = env_seed()) return *env;
  if (fc.seed) return *fc.seed;
  return fallback;
}

std::string need_path(const CLI::App* cmd, const std::string& flag, const std::string& flag_value,
                      const std::optional<std::string>& file_value, const std::string& config_key) {
  if (cmd->count(flag)) return flag_value;
  if (file_value && !file_value->empty()) return *file_value;
  throw CliError(kConfigExit, "missing " + flag + " (or \"" + config_key + "\" in the config file)");
}

std::string dims_str(const Dims& d) {
  std::ostringstream os;
  os << "t=" << d.t << " p=" << d.p << " l_max=" << d.l_max << " d_a=" << d.d_a << " d=" << d.d
     << " c=" << d.c;
  return os.str();
}

void check_dims(const Dims& d) {
  if (d.t < 1 || d.p < 1 || d.l_max < 1 || d.d_a < 1 || d.d < 1 || d.c < 1)
    throw CliError(kConfigExit, "dims must all be positive: " + dims_str(d));
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw CliError(kIoExit, "cannot write " + path);
  return f;
}

struct GenArgs {
  std::string config, out;
  int64_t n = 100;
  uint64_t seed = 42;
  double noise_sigma = 0.1;
};

int run_gen(const CLI::App* cmd, const GenArgs& a) {
  FileConfig fc = maybe_config(cmd, a.config);
  GenConfig g;
  g.dims = fc.dims.value_or(Dims{});
  g.n = pick(cmd, "--n", static_cast<Index>(a.n), fc.n, Index{100});
  g.seed = pick_seed(cmd, a.seed, fc, 42);
  g.noise_sigma = pick(cmd, "--noise-sigma", a.noise_sigma, fc.noise_sigma, 0.1);
  std::string out = need_path(cmd, "--out", a.out, fc.out, "out");
  if (g.n < 1) throw CliError(kConfigExit, "gen: n must be positive, got " + std::to_string(g.n));
  if (g.noise_sigma < 0)
    throw CliError(kConfigExit, "gen: noise_sigma must be non-negative, got " + std::to_string(g.noise_sigma));
  check_dims(g.dims);

  DatasetSummary s = generate_dataset(g, out);
  std::cout << "generated " << g.n << " scenes (seed " << g.seed << "): " << s.n_train << " train / "
            << s.n_test << " test\n";
  std::cout << "templates:";
  for (const auto& [code, count] : s.per_template) std::cout << " " << code << "=" << count;
  std::cout << "\n";
  std::cout << "dims: " << dims_str(g.dims) << "\n";
  std::cout << "files: " << out << "/train.sasr " << out << "/test.sasr\n";
  return kOkExit;
}

struct TrainArgs {
  std::string config, data, out;
  int64_t batch_size = 16, epochs = 80, decay_every = 16;
  double lr = 1e-4, decay_factor = 0.3;
  double lambda_source = 0.5, lambda_reg = 0.5, lambda_match = 0.5;
  uint64_t seed = 42;
  bool slt_on = true, sasr_on = true, sa_on = true, ta_on = true, layer_norm = false;
};

TrainConfig merge_train_config(const CLI::App* cmd, const TrainArgs& a, const FileConfig& fc) {
  TrainConfig d;
  TrainConfig c;
  c.batch_size = pick(cmd, "--batch-size", static_cast<Index>(a.batch_size), fc.batch_size, d.batch_size);
  c.epochs = pick(cmd, "--epochs", static_cast<Index>(a.epochs), fc.epochs, d.epochs);
  c.lr = pick(cmd, "--lr", a.lr, fc.lr, d.lr);
  c.decay_factor = pick(cmd, "--decay-factor", a.decay_factor, fc.decay_factor, d.decay_factor);
  c.decay_every = pick(cmd, "--decay-every", static_cast<Index>(a.decay_every), fc.decay_every, d.decay_every);
  c.lambda_source = pick(cmd, "--lambda-source", a.lambda_source, fc.lambda_source, d.lambda_source);
  c.lambda_reg = pick(cmd, "--lambda-reg", a.lambda_reg, fc.lambda_reg, d.lambda_reg);
  c.lambda_match = pick(cmd, "--lambda-match", a.lambda_match, fc.lambda_match, d.lambda_match);
  c.seed = pick_seed(cmd, a.seed, fc, d.seed);
  c.slt_on = pick(cmd, "--slt-on", a.slt_on, fc.slt_on, d.slt_on);
  c.sasr_on = pick(cmd, "--sasr-on", a.sasr_on, fc.sasr_on, d.sasr_on);
  c.sa_on = pick(cmd, "--sa-on", a.sa_on, fc.sa_on, d.sa_on);
  c.ta_on = pick(cmd, "--ta-on", a.ta_on, fc.ta_on, d.ta_on);
  c.layer_norm = pick(cmd, "--layer-norm", a.layer_norm, fc.layer_norm, d.layer_norm);
  return c;
}

int run_train(const CLI::App* cmd, const TrainArgs& a) {
  FileConfig fc = maybe_config(cmd, a.config);
  TrainConfig cfg = merge_train_config(cmd, a, fc);
  cfg.validate();
  std::string data = need_path(cmd, "--data", a.data, fc.data, "data");
  std::string out = need_path(cmd, "--out", a.out, fc.out, "out");

  DatasetReader reader(data);
  std::cout << "train: " << reader.size() << " samples, batch_size " << cfg.batch_size << ", epochs "
            << cfg.epochs << ", lr " << cfg.lr << ", seed " << cfg.seed << "\n";
  TrainResult r = train(reader, cfg, out, &std::cout);
  std::cout << "steps: " << r.steps << "\n";
  std::cout << "metrics: " << r.metrics_path << "\n";
  std::cout << "checkpoint: " << r.final_checkpoint << "\n";
  return kOkExit;
}

json report_json(const EvalReport& rep) {
  json per = json::object();
  for (const auto& [code, stat] : rep.per_template) {
    double acc = stat.total ? static_cast<double>(stat.correct) / static_cast<double>(stat.total) : 0.0;
    per[std::string(1, code)] = {{"n", stat.total}, {"correct", stat.correct}, {"accuracy", acc}};
  }
  return {{"n", rep.n}, {"correct", rep.correct}, {"accuracy", rep.accuracy}, {"per_template", per}};
}

void print_report(const EvalReport& rep) {
  std::cout << std::left << std::setw(10) << "template" << std::right << std::setw(7) << "n"
            << std::setw(9) << "correct" << std::setw(10) << "accuracy" << "\n";
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& [code, stat] : rep.per_template) {
    double acc = stat.total ? static_cast<double>(stat.correct) / static_cast<double>(stat.total) : 0.0;
    std::cout << std::left << std::setw(10) << std::string(1, code) << std::right << std::setw(7)
              << stat.total << std::setw(9) << stat.correct << std::setw(10) << acc << "\n";
  }
  std::cout << std::left << std::setw(10) << "overall" << std::right << std::setw(7) << rep.n
            << std::setw(9) << rep.correct << std::setw(10) << rep.accuracy << "\n";
  std::cout.unsetf(std::ios::fixed);
  std::cout << std::setprecision(6);
}

struct EvalArgs {
  std::string config, ckpt, data, json_path;
};

int run_eval(const CLI::App* cmd, const EvalArgs& a) {
  FileConfig fc = maybe_config(cmd, a.config);
  std::string ckpt_path = need_path(cmd, "--ckpt", a.ckpt, fc.ckpt, "ckpt");
  std::string data = need_path(cmd, "--data", a.data, fc.data, "data");

  Checkpoint ck = load_checkpoint(ckpt_path);
  DatasetReader reader(data);
  EvalReport rep = evaluate(ck.params, ck.config, reader);
  print_report(rep);
  json j = report_json(rep);
  if (cmd->count("--json")) {
    open_out(a.json_path) << j.dump(2) << "\n";
    std::cout << "report: " << a.json_path << "\n";
  } else {
    std::cout << j.dump() << "\n";
  }
  return kOkExit;
}

Tensor rand_leaf(Rng& rng, Shape shape) {
  Tensor x = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < x.size(); ++i) x.values()(i) = rng.uniform(-1.0, 1.0);
  x.set_requires_grad(true);
  return x;
}

Tensor rand_const(Rng& rng, Shape shape) {
  Tensor x = rand_leaf(rng, std::move(shape));
  x.set_requires_grad(false);
  return x;
}

Tensor proj(Tape& t, Tensor x, Tensor probe) { return sum_all(t, mul(t, x, probe)); }

Affine rand_affine(Rng& rng, Index in, Index out) {
  return {rand_leaf(rng, {in, out}), rand_leaf(rng, {out})};
}

CrossAttnParams rand_cross(Rng& rng, Index d) {
  return {rand_affine(rng, d, d), rand_leaf(rng, {d, d}), rand_affine(rng, d, d)};
}

void push_affine(std::vector<GradCheckParam>& ps, const std::string& prefix, const Affine& a) {
  ps.push_back({prefix + ".w", a.w});
  ps.push_back({prefix + ".b", a.b});
}

void push_cross(std::vector<GradCheckParam>& ps, const std::string& prefix, const CrossAttnParams& c) {
  push_affine(ps, prefix + ".q", c.query);
  ps.push_back({prefix + ".k.w", c.key_w});
  push_affine(ps, prefix + ".v", c.value);
}

struct Probe {
  std::string name;
  std::function<Tensor(Tape&)> f;
  std::vector<GradCheckParam> params;
  Scalar min_ad = 0.0;
};

Probe slt_probe(uint64_t seed) {
  Rng rng(seed);
  const Index t = 5, d = 8, c = 3;
  Tensor f_a = rand_leaf(rng, {t, d});
  Tensor f_v = rand_leaf(rng, {t, d});
  Tensor bank = rand_leaf(rng, {c, d});
  Tensor pa = rand_const(rng, {t, d}), pv = rand_const(rng, {t, d});
  Tensor pta = rand_const(rng, {c, d}), ptv = rand_const(rng, {c, d});
  Probe p;
  p.name = "slt";
  p.params = {{"f_audio", f_a}, {"f_visual", f_v}, {"token_bank", bank}};
  p.f = [=](Tape& tape) {
    SourceAwareEmbeddings out = slt_forward(tape, f_a, f_v, bank);
    Tensor s = add(tape, proj(tape, out.f_s_audio, pa), proj(tape, out.f_s_visual, pv));
    s = add(tape, s, proj(tape, out.tokens_audio, pta));
    return add(tape, s, proj(tape, out.tokens_visual, ptv));
  };
  return p;
}

Probe sasr_probe(uint64_t seed) {
  Rng rng(seed);
  const Index t = 4, d = 8, c = 3;
  SourceAwareEmbeddings src;
  src.f_s_audio = rand_leaf(rng, {t, d});
  src.f_s_visual = rand_leaf(rng, {t, d});
  src.tokens_audio = rand_leaf(rng, {c, d});
  src.tokens_visual = rand_leaf(rng, {c, d});
  SasrParams sp;
  sp.audio = SasrModalityParams{rand_cross(rng, d), rand_affine(rng, d, d), rand_cross(rng, d),
                                rand_affine(rng, d, d)};
  sp.visual = SasrModalityParams{rand_cross(rng, d), rand_affine(rng, d, d), rand_cross(rng, d),
                                 rand_affine(rng, d, d)};
  Tensor pa = rand_const(rng, {t, d}), pv = rand_const(rng, {t, d});
  Tensor pta = rand_const(rng, {c, d}), ptv = rand_const(rng, {c, d});
  Probe p;
  p.name = "sasr";
  p.params = {{"f_s_audio", src.f_s_audio},
              {"f_s_visual", src.f_s_visual},
              {"tokens_audio", src.tokens_audio},
              {"tokens_visual", src.tokens_visual}};
  for (const auto& [mod, mp] : {std::pair<std::string, const SasrModalityParams*>{"a", &sp.audio},
                                {"v", &sp.visual}}) {
    push_cross(p.params, mod + ".tok", mp->token_update);
    push_affine(p.params, mod + ".tok.out", mp->token_out);
    push_cross(p.params, mod + ".feat", mp->feature_enrich);
    push_affine(p.params, mod + ".feat.out", mp->feature_out);
  }
  p.f = [=](Tape& tape) {
    EnrichedEmbeddings out = sasr_forward(tape, src, sp);
    Tensor s = add(tape, proj(tape, out.f_g_audio, pa), proj(tape, out.f_g_visual, pv));
    s = add(tape, s, proj(tape, out.tokens_audio, pta));
    return add(tape, s, proj(tape, out.tokens_visual, ptv));
  };
  return p;
}

Probe spatial_probe(uint64_t seed) {
  Rng rng(seed);
  const Index t = 4, pdim = 5, d = 8;
  Tensor vis_map = rand_leaf(rng, {t, pdim, d});
  Tensor f_g_a = rand_leaf(rng, {t, d});
  Tensor f_g_v = rand_leaf(rng, {t, d});
  Affine out_map = rand_affine(rng, 2 * d, d);
  Tensor pat = rand_const(rng, {t, d}), psa = rand_const(rng, {t, d}), pw = rand_const(rng, {t, pdim});
  Probe p;
  p.name = "spatial";
  p.params = {{"vis_map", vis_map}, {"f_g_audio", f_g_a}, {"f_g_visual", f_g_v}};
  push_affine(p.params, "out", out_map);
  p.f = [=](Tape& tape) {
    SpatialOutputs out = spatial_attend(tape, vis_map, f_g_a, f_g_v, out_map);
    Tensor s = add(tape, proj(tape, out.attended, pat), proj(tape, out.spatially_attended, psa));
    return add(tape, s, proj(tape, out.weights, pw));
  };
  return p;
}

Probe temporal_probe(uint64_t seed) {
  Rng rng(seed);
  const Index t = 6, d = 8;
  Tensor f_q = rand_leaf(rng, {d});
  Tensor f_g_a = rand_leaf(rng, {t, d});
  Tensor f_sa_v = rand_leaf(rng, {t, d});
  Tensor ppa = rand_const(rng, {d}), ppv = rand_const(rng, {d});
  Tensor pwa = rand_const(rng, {t}), pwv = rand_const(rng, {t});
  Probe p;
  p.name = "temporal";
  p.params = {{"f_q", f_q}, {"f_g_audio", f_g_a}, {"f_sa_visual", f_sa_v}};
  p.f = [=](Tape& tape) {
    TemporalOutputs out = temporal_attend(tape, f_q, f_g_a, f_sa_v);
    Tensor s = add(tape, proj(tape, out.pooled_audio, ppa), proj(tape, out.pooled_visual, ppv));
    s = add(tape, s, proj(tape, out.weights_audio, pwa));
    return add(tape, s, proj(tape, out.weights_visual, pwv));
  };
  return p;
}

Probe head_probe(uint64_t seed) {
  Rng rng(seed);
  const Index t = 4, d = 8, a = 5;
  Tensor pooled_a = rand_leaf(rng, {d});
  Tensor pooled_v = rand_leaf(rng, {d});
  Tensor f_g_a = rand_leaf(rng, {t, d});
  Tensor f_g_v = rand_leaf(rng, {t, d});
  Tensor f_q = rand_leaf(rng, {d});
  HeadParams hp{rand_affine(rng, 2 * d, d), rand_affine(rng, d, a)};
  Probe p;
  p.name = "head";
  p.params = {{"pooled_audio", pooled_a},
              {"pooled_visual", pooled_v},
              {"f_g_audio", f_g_a},
              {"f_g_visual", f_g_v},
              {"f_q", f_q}};
  push_affine(p.params, "fuse", hp.fuse);
  push_affine(p.params, "out", hp.out);
  p.f = [=](Tape& tape) {
    Prediction pred = fuse_and_classify(tape, pooled_a, pooled_v, f_g_a, f_g_v, f_q, hp);
    return loss_avqa(tape, pred, 2);
  };
  return p;
}

Probe lstm_probe(uint64_t seed) {
  Rng rng(seed);
  const Index v = 9, d = 6;
  Tensor embedding = rand_leaf(rng, {v, d});
  LstmParams lp{rand_leaf(rng, {d, 4 * d}), rand_leaf(rng, {d, 4 * d}), rand_leaf(rng, {4 * d})};
  Tensor ph = rand_const(rng, {d});
  std::vector<uint16_t> tokens{0, 1, 2, 3, 4, 5, 6, 7, 8, 3, 1};
  Probe p;
  p.name = "lstm";
  p.params = {{"embed", embedding}, {"w_ih", lp.w_ih}, {"w_hh", lp.w_hh}, {"b", lp.b}};
  p.f = [=, toks = std::move(tokens)](Tape& tape) {
    return proj(tape, encode_question(tape, toks, embedding, lp), ph);
  };
  return p;
}

/// Whole-model check on a tiny generated batch. Coordinates whose gradient
/// sits below the finite-difference resolution are screened out; the
/// per-block probes above cover every op with well-conditioned inputs.
Probe end_to_end_probe() {
  Dims dims;
  dims.t = 2;
  dims.p = 3;
  dims.l_max = 6;
  dims.d_a = 4;
  dims.d = 6;
  dims.c = 2;
  Vocabulary vocab = Vocabulary::make(dims.c);
  PrototypeBank protos = PrototypeBank::make(dims, mix_seed(71, fnv1a64("protos")));
  auto batch = std::make_shared<std::vector<FeatureBundle>>();
  for (Index i = 0; i < 2; ++i) {
    SceneSpec spec = make_scene_spec(dims, i, 71);
    Template tpl = pick_template(spec, i);
    batch->push_back(generate_scene(spec, protos, 0.1, tpl, dims, vocab));
  }
  ModelConfig mc;
  mc.dims = dims;
  mc.question_vocab = static_cast<Index>(vocab.question_words.size());
  mc.answer_count = static_cast<Index>(vocab.answers.size());
  auto mp = std::make_shared<ModelParams>(ModelParams::init(mc, 14));
  Probe p;
  p.name = "end-to-end";
  for (const auto& nt : mp->named()) p.params.push_back({nt.name, nt.tensor});
  p.min_ad = 1e-6;
  p.f = [mp, mc, batch](Tape& tape) {
    return batch_loss(tape, *mp, mc, *batch, 29, 0.5, 0.5, 0.5).bundle.total;
  };
  return p;
}

bool corrupt_requested() {
  const char* e = std::getenv("SASR_TEST_CORRUPT_BACKWARD");
  return e && *e;
}

/// Identity forward whose backward rule over-credits its input by 25%, so
/// the finite-difference comparison must flag every upstream coordinate.
/// Reachable only through the SASR_TEST_CORRUPT_BACKWARD env var.
Tensor corrupt_identity(Tape& t, Tensor x) {
  Tensor out = Tensor::from(x.shape(), x.values());
  return t.record("corrupt_identity", out, {x}, [x, out]() mutable {
    if (x.requires_grad()) x.grad() += 1.25 * out.grad();
  });
}

struct GradArgs {
  std::string config;
  int samples = 150;
  uint64_t seed = 81;
  double step = 1e-5;
};

int run_gradcheck(const CLI::App* cmd, const GradArgs& a) {
  FileConfig fc = maybe_config(cmd, a.config);
  const int samples = a.samples;
  const uint64_t seed = pick_seed(cmd, a.seed, fc, 81);
  const double step = a.step;
  if (samples < 1) throw CliError(kConfigExit, "gradcheck: samples must be positive");
  if (!(step > 0)) throw CliError(kConfigExit, "gradcheck: step must be positive");
  const Scalar threshold = 1e-4;
  const bool corrupt = corrupt_requested();

  std::vector<Probe> probes;
  probes.push_back(slt_probe(mix_seed(seed, fnv1a64("slt"))));
  probes.push_back(sasr_probe(mix_seed(seed, fnv1a64("sasr"))));
  probes.push_back(spatial_probe(mix_seed(seed, fnv1a64("spatial"))));
  probes.push_back(temporal_probe(mix_seed(seed, fnv1a64("temporal"))));
  probes.push_back(head_probe(mix_seed(seed, fnv1a64("head"))));
  probes.push_back(lstm_probe(mix_seed(seed, fnv1a64("lstm"))));
  probes.push_back(end_to_end_probe());

  auto start = std::chrono::steady_clock::now();
  bool all_ok = true;
  std::string worst_block, worst_param;
  Index worst_coord = -1;
  Scalar worst_rel = 0, worst_ad = 0, worst_fd = 0;
  std::cout << std::scientific << std::setprecision(3);
  for (const auto& probe : probes) {
    auto f = probe.f;
    if (corrupt)
      f = [inner = probe.f](Tape& tape) { return corrupt_identity(tape, inner(tape)); };
    GradCheckReport rep = grad_check(f, probe.params, step, samples, mix_seed(seed, fnv1a64("draws")),
                                     probe.min_ad);
    bool ok = rep.max_rel_error < threshold && rep.compared >= std::min(samples, 100);
    std::cout << std::left << std::setw(12) << probe.name << "max rel " << rep.max_rel_error
              << "  coords " << std::right << std::setw(4) << rep.compared << "  "
              << (ok ? "ok" : "FAIL") << "\n";
    if (!ok && (all_ok || rep.max_rel_error > worst_rel)) {
      worst_block = probe.name;
      worst_param = rep.worst_param;
      worst_coord = rep.worst_coord;
      worst_rel = rep.max_rel_error;
      worst_ad = rep.ad;
      worst_fd = rep.fd;
    }
    all_ok = all_ok && ok;
  }
  auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << std::setprecision(1) << std::fixed << "elapsed " << elapsed << " s\n";
  std::cout.unsetf(std::ios::fixed | std::ios::scientific);
  std::cout << std::setprecision(6);
  if (!all_ok) {
    std::cerr << std::scientific << std::setprecision(3) << "gradcheck failed: " << worst_block << "/"
              << worst_param << " coord " << worst_coord << " ad=" << worst_ad << " fd=" << worst_fd
              << " rel=" << worst_rel << "\n";
    return kGradExit;
  }
  std::cout << "all gradients within " << threshold << " of central differences\n";
  return kOkExit;
}

struct ExportArgs {
  std::string config, ckpt, data, sample, out;
};

void write_csv_rows(const std::string& path, const Tensor& w) {
  std::ofstream f = open_out(path);
  f << std::setprecision(17);
  const Index rows = w.rank() == 1 ? 1 : w.dim(0);
  const Index cols = w.rank() == 1 ? w.dim(0) : w.dim(1);
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) f << (c ? "," : "") << w.values()(r * cols + c);
    f << "\n";
  }
}

void write_pgm_row_scaled(const std::string& path, const Tensor& w) {
  const Index rows = w.dim(0), cols = w.dim(1);
  std::ofstream f = open_out(path, std::ios::binary);
  f << "P5\n" << cols << " " << rows << "\n255\n";
  std::vector<unsigned char> bytes(static_cast<size_t>(rows * cols));
  for (Index r = 0; r < rows; ++r) {
    Scalar row_max = 0;
    for (Index c = 0; c < cols; ++c) row_max = std::max(row_max, w.values()(r * cols + c));
    for (Index c = 0; c < cols; ++c) {
      Scalar v = row_max > 0 ? w.values()(r * cols + c) / row_max : 0;
      bytes[static_cast<size_t>(r * cols + c)] = static_cast<unsigned char>(std::lround(255.0 * v));
    }
  }
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

int run_export_attn(const CLI::App* cmd, const ExportArgs& a) {
  FileConfig fc = maybe_config(cmd, a.config);
  std::string ckpt_path = need_path(cmd, "--ckpt", a.ckpt, fc.ckpt, "ckpt");
  std::string data = need_path(cmd, "--data", a.data, fc.data, "data");
  std::string out = need_path(cmd, "--out", a.out, fc.out, "out");

  Checkpoint ck = load_checkpoint(ckpt_path);
  DatasetReader reader(data);
  if (!(ck.config.dims == reader.manifest().dims))
    throw CliError(kConfigExit, "export-attn: checkpoint dims (" + dims_str(ck.config.dims) +
                                    ") do not match dataset dims (" + dims_str(reader.manifest().dims) + ")");
  if (!reader.contains(a.sample))
    throw CliError(kConfigExit, "export-attn: sample not found: " + a.sample);
  if (!ck.config.sa_on)
    throw CliError(kConfigExit, "export-attn: checkpoint was trained with spatial attention off");

  FeatureBundle bundle = reader.load(a.sample);
  Tape tape;
  tape.grad_enabled = false;
  SampleForward fw = forward_sample(tape, ck.params, ck.config, bundle);

  std::filesystem::create_directories(out);
  const std::string base = out + "/" + a.sample;
  write_csv_rows(base + ".spatial.csv", fw.spatial.weights);
  write_pgm_row_scaled(base + ".spatial.pgm", fw.spatial.weights);
  write_csv_rows(base + ".temporal_audio.csv", fw.temporal.weights_audio);
  write_csv_rows(base + ".temporal_visual.csv", fw.temporal.weights_visual);
  std::cout << "wrote " << base << ".spatial.csv\n";
  std::cout << "wrote " << base << ".spatial.pgm\n";
  std::cout << "wrote " << base << ".temporal_audio.csv\n";
  std::cout << "wrote " << base << ".temporal_visual.csv\n";
  std::cout << "answer: " << fw.pred.answer_id << "\n";
  return kOkExit;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic audio-visual question answering workbench"};
  app.require_subcommand(1);

  GenArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset (train/test split)");
  gen->add_option("--config", gen_args.config, "JSON config file");
  gen->add_option("--out", gen_args.out, "output directory");
  gen->add_option("--n", gen_args.n, "number of scenes");
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--noise-sigma", gen_args.noise_sigma, "feature noise level");

  TrainArgs train_args;
  CLI::App* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->add_option("--config", train_args.config, "JSON config file");
  tr->add_option("--data", train_args.data, "training dataset (.sasr)");
  tr->add_option("--out", train_args.out, "output directory for checkpoints and metrics");
  tr->add_option("--batch-size", train_args.batch_size, "samples per step");
  tr->add_option("--epochs", train_args.epochs, "training epochs");
  tr->add_option("--lr", train_args.lr, "initial learning rate");
  tr->add_option("--decay-factor", train_args.decay_factor, "lr multiplier per decay period");
  tr->add_option("--decay-every", train_args.decay_every, "epochs per decay period");
  tr->add_option("--lambda-source", train_args.lambda_source, "presence loss weight");
  tr->add_option("--lambda-reg", train_args.lambda_reg, "token regularizer weight");
  tr->add_option("--lambda-match", train_args.lambda_match, "match loss weight");
  tr->add_option("--seed", train_args.seed, "training seed");
  tr->add_option("--slt-on", train_args.slt_on, "enable the token self-attention block");
  tr->add_option("--sasr-on", train_args.sasr_on, "enable the cross-attention enrichment block");
  tr->add_option("--sa-on", train_args.sa_on, "enable spatial attention");
  tr->add_option("--ta-on", train_args.ta_on, "enable temporal attention");
  tr->add_option("--layer-norm", train_args.layer_norm, "row-standardize updated token banks");

  EvalArgs eval_args;
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--config", eval_args.config, "JSON config file");
  ev->add_option("--ckpt", eval_args.ckpt, "checkpoint file");
  ev->add_option("--data", eval_args.data, "dataset (.sasr)");
  ev->add_option("--json", eval_args.json_path, "write the report to this JSON file");

  GradArgs grad_args;
  CLI::App* gc = app.add_subcommand("gradcheck", "compare gradients against central differences");
  gc->add_option("--config", grad_args.config, "JSON config file");
  gc->add_option("--samples", grad_args.samples, "coordinates to check per block");
  gc->add_option("--seed", grad_args.seed, "sampling seed");
  gc->add_option("--step", grad_args.step, "finite-difference step");

  ExportArgs export_args;
  CLI::App* ex = app.add_subcommand("export-attn", "export attention weights for one sample");
  ex->add_option("--config", export_args.config, "JSON config file");
  ex->add_option("--ckpt", export_args.ckpt, "checkpoint file");
  ex->add_option("--data", export_args.data, "dataset (.sasr)");
  ex->add_option("--sample", export_args.sample, "sample id")->required();
  ex->add_option("--out", export_args.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOkExit : kConfigExit;
  }

  try {
    if (gen->parsed()) return run_gen(gen, gen_args);
    if (tr->parsed()) return run_train(tr, train_args);
    if (ev->parsed()) return run_eval(ev, eval_args);
    if (gc->parsed()) return run_gradcheck(gc, grad_args);
    if (ex->parsed()) return run_export_attn(ex, export_args);
  } catch (const CliError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return e.code;
  } catch (const NumericAbortError& e) {
    std::cerr << "sasr: numeric abort: " << e.what() << "\n";
    return kNumericExit;
  } catch (const DimensionError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kConfigExit;
  } catch (const ContractError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kConfigExit;
  } catch (const IoError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kIoExit;
  } catch (const FormatError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kIoExit;
  } catch (const CorruptionError& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kIoExit;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kIoExit;
  } catch (const std::exception& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return kIoExit;
  }
  return kOkExit;
}
