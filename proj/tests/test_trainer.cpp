#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "sasr/grad_check.hpp"
#include "sasr/rng.hpp"
#include "sasr/synth_gen.hpp"
#include "sasr/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using namespace sasr;

namespace {

std::string temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "sasr_trainer_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::vector<uint8_t> file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

Dims small_dims() {
  Dims dims;
  dims.t = 4;
  dims.p = 6;
  dims.l_max = 12;
  dims.d_a = 8;
  dims.d = 12;
  dims.c = 4;
  return dims;
}

std::string gen_dataset(const std::string& name, Index n, uint64_t seed, Dims dims) {
  GenConfig cfg;
  cfg.dims = dims;
  cfg.n = n;
  cfg.seed = seed;
  std::string dir = temp_dir(name);
  generate_dataset(cfg, dir);
  return dir;
}

ModelConfig config_for(const DatasetManifest& man) {
  ModelConfig mc;
  mc.dims = man.dims;
  mc.question_vocab = static_cast<Index>(man.question_vocab_size);
  mc.answer_count = static_cast<Index>(man.answer_vocab.size());
  return mc;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (!shape_eq(a.shape(), b.shape())) return false;
  return std::memcmp(a.values().data(), b.values().data(), sizeof(Scalar) * static_cast<size_t>(a.size())) == 0;
}

bool message_mentions(const std::exception& e, const std::string& needle) {
  return std::string(e.what()).find(needle) != std::string::npos;
}

Tensor random_param(Shape shape, uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = rng.uniform(-1, 1);
  t.set_requires_grad(true);
  return t;
}

FeatureBundle blank_bundle(const Dims& dims, const std::string& id, uint16_t answer) {
  FeatureBundle b;
  b.sample_id = id;
  b.audio_raw = Tensor::full({dims.t, dims.d_a}, 0.25);
  b.visual_vec = Tensor::full({dims.t, dims.d}, -0.5);
  b.visual_map = Tensor::full({dims.t, dims.p, dims.d}, 0.125);
  b.question_tokens = {0, 1};
  b.answer_id = answer;
  b.source_presence.assign(static_cast<size_t>(dims.c), 0);
  b.source_presence[0] = 1;
  return b;
}

}  // namespace

TEST_CASE("lr schedule steps down by the decay factor") {
  TrainConfig cfg;
  cfg.lr = 1e-4;
  cfg.decay_factor = 0.3;
  cfg.decay_every = 16;
  CHECK(lr_at(0, cfg) == 1e-4);
  CHECK(lr_at(15, cfg) == 1e-4);
  CHECK(lr_at(16, cfg) == 1e-4 * 0.3);
  CHECK(lr_at(31, cfg) == 1e-4 * 0.3);
  CHECK(lr_at(32, cfg) == 1e-4 * 0.3 * 0.3);
}

TEST_CASE("train config validation rejects out-of-range values") {
  TrainConfig cfg;
  cfg.validate();
  TrainConfig bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.lr = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.decay_factor = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.decay_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.decay_every = 0;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.lambda_source = -0.1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
  bad = cfg;
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ContractError);
}

TEST_CASE("adam first step moves a unit-gradient parameter by the learning rate") {
  Tensor p = Tensor::zeros({3});
  p.set_requires_grad(true);
  p.grad() = Array::Ones(3);
  std::vector<NamedTensor> params{{"p", p}};
  Adam adam;
  adam.step(params, 1e-3);
  for (Index i = 0; i < 3; ++i) CHECK(std::abs(std::abs(p.values()(i)) - 1e-3) < 1e-8);
  CHECK(p.values()(0) < 0.0);
  CHECK(adam.steps() == 1);
}

TEST_CASE("adam leaves zero-gradient parameters untouched") {
  Tensor p = Tensor::from({3}, {0.5, -1.25, 2.0});
  p.set_requires_grad(true);
  Tensor q = Tensor::from({2}, {1.0, 2.0});
  q.set_requires_grad(true);
  q.grad() = Array::Ones(2);
  std::vector<NamedTensor> params{{"p", p}, {"q", q}};
  Adam adam;
  adam.step(params, 1e-2);
  CHECK(p.values()(0) == 0.5);
  CHECK(p.values()(1) == -1.25);
  CHECK(p.values()(2) == 2.0);
  CHECK(q.values()(0) != 1.0);
}

TEST_CASE("adam is deterministic across identical runs") {
  auto run = [](int steps) {
    Tensor p = Tensor::from({4}, {0.1, -0.2, 0.3, -0.4});
    p.set_requires_grad(true);
    std::vector<NamedTensor> params{{"p", p}};
    Adam adam;
    Rng rng(5);
    for (int s = 0; s < steps; ++s) {
      p.zero_grad();
      for (Index i = 0; i < 4; ++i) p.grad()(i) = rng.uniform(-1, 1);
      adam.step(params, 3e-3);
    }
    return p;
  };
  Tensor a = run(10);
  Tensor b = run(10);
  CHECK(same_bits(a, b));
}

TEST_CASE("adam aborts on a non-finite gradient naming the parameter") {
  Tensor p = Tensor::zeros({2});
  p.set_requires_grad(true);
  p.grad() = Array::Ones(2);
  p.grad()(1) = std::numeric_limits<Scalar>::quiet_NaN();
  std::vector<NamedTensor> params{{"spatial.w", p}};
  Adam adam;
  try {
    adam.step(params, 1e-3);
    FAIL("expected NumericAbortError");
  } catch (const NumericAbortError& e) {
    CHECK(message_mentions(e, "spatial.w"));
  }
}

TEST_CASE("checkpoint round-trips parameters, config, and counters bit-exactly") {
  ModelConfig cfg;
  cfg.dims = small_dims();
  cfg.question_vocab = 12;
  cfg.answer_count = 9;
  cfg.sa_on = false;
  cfg.layer_norm = true;
  ModelParams params = ModelParams::init(cfg, 77);
  std::string dir = temp_dir("ckpt_roundtrip");
  std::string path = dir + "/model.ckpt";
  save_checkpoint(path, params, cfg, 123, 4, 77);

  Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.step == 123);
  CHECK(loaded.epoch == 4);
  CHECK(loaded.seed == 77);
  CHECK(loaded.config.dims == cfg.dims);
  CHECK(loaded.config.question_vocab == cfg.question_vocab);
  CHECK(loaded.config.answer_count == cfg.answer_count);
  CHECK(loaded.config.sa_on == cfg.sa_on);
  CHECK(loaded.config.layer_norm == cfg.layer_norm);

  auto a = params.named();
  auto b = loaded.params.named();
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(same_bits(a[i].tensor, b[i].tensor));
  }
}

TEST_CASE("checkpoint loader rejects truncated and mangled files") {
  ModelConfig cfg;
  cfg.dims = small_dims();
  cfg.question_vocab = 12;
  cfg.answer_count = 9;
  ModelParams params = ModelParams::init(cfg, 3);
  std::string dir = temp_dir("ckpt_damage");
  std::string path = dir + "/model.ckpt";
  save_checkpoint(path, params, cfg, 1, 1, 3);
  std::vector<uint8_t> bytes = file_bytes(path);

  std::string cut = dir + "/cut.ckpt";
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(cut), FormatError);

  std::string mangled = dir + "/mangled.ckpt";
  {
    std::vector<uint8_t> copy = bytes;
    std::string needle = "token_bank";
    auto it = std::search(copy.begin(), copy.end(), needle.begin(), needle.end());
    REQUIRE(it != copy.end());
    *it = 'x';
    std::ofstream out(mangled, std::ios::binary);
    out.write(reinterpret_cast<const char*>(copy.data()), static_cast<std::streamsize>(copy.size()));
  }
  CHECK_THROWS_AS(load_checkpoint(mangled), CorruptionError);

  CHECK_THROWS_AS(load_checkpoint(dir + "/missing.ckpt"), IoError);
}

TEST_CASE("one smoke epoch logs finite metrics and writes a checkpoint") {
  std::string data_dir = gen_dataset("smoke_data", 40, 11, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");
  REQUIRE(reader.size() == 32);

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.seed = 5;
  std::string out_dir = temp_dir("smoke_out");
  TrainResult result = train(reader, cfg, out_dir);
  CHECK(result.steps == 4);
  CHECK(std::filesystem::exists(result.final_checkpoint));
  CHECK(result.step_totals.size() == 4);

  std::ifstream metrics(result.metrics_path);
  REQUIRE(metrics.good());
  std::string line;
  int lines = 0;
  while (std::getline(metrics, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.at("step").get<int64_t>() == lines);
    CHECK(j.at("epoch").get<int64_t>() == 0);
    CHECK(j.at("lr").get<double>() == cfg.lr);
    for (const char* key : {"l_avqa", "l_source", "l_reg", "l_match", "total"}) {
      CHECK(std::isfinite(j.at(key).get<double>()));
      CHECK(j.at(key).get<double>() >= 0.0);
    }
    ++lines;
  }
  CHECK(lines == 4);

  Checkpoint ck = load_checkpoint(result.final_checkpoint);
  CHECK(ck.step == 4);
  CHECK(ck.epoch == 1);
  CHECK(ck.seed == 5);
}

TEST_CASE("same seed trains to byte-identical metrics and checkpoints") {
  std::string data_dir = gen_dataset("det_data", 30, 21, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");

  TrainConfig cfg;
  cfg.batch_size = 6;
  cfg.epochs = 2;
  cfg.seed = 9;
  std::string d1 = temp_dir("det_out1"), d2 = temp_dir("det_out2");
  TrainResult r1 = train(reader, cfg, d1);
  TrainResult r2 = train(reader, cfg, d2);
  CHECK(file_bytes(r1.metrics_path) == file_bytes(r2.metrics_path));
  CHECK(file_bytes(r1.final_checkpoint) == file_bytes(r2.final_checkpoint));

  TrainConfig other = cfg;
  other.seed = 10;
  std::string d3 = temp_dir("det_out3");
  TrainResult r3 = train(reader, cfg, d3);
  CHECK(file_bytes(r1.final_checkpoint) == file_bytes(r3.final_checkpoint));
}

TEST_CASE("evaluation of a reloaded checkpoint reproduces the report exactly") {
  std::string data_dir = gen_dataset("eval_data", 50, 31, small_dims());
  DatasetReader train_reader(data_dir + "/train.sasr");
  DatasetReader test_reader(data_dir + "/test.sasr");

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 1;
  cfg.seed = 13;
  std::string out_dir = temp_dir("eval_out");
  TrainResult result = train(train_reader, cfg, out_dir);

  Checkpoint c1 = load_checkpoint(result.final_checkpoint);
  Checkpoint c2 = load_checkpoint(result.final_checkpoint);
  EvalReport r1 = evaluate(c1.params, c1.config, test_reader);
  EvalReport r2 = evaluate(c2.params, c2.config, test_reader);
  CHECK(r1.n == test_reader.size());
  CHECK(r1.n == r2.n);
  CHECK(r1.correct == r2.correct);
  CHECK(r1.accuracy == r2.accuracy);
  REQUIRE(r1.per_template.size() == r2.per_template.size());
  Index bucket_total = 0;
  for (auto& [code, stat] : r1.per_template) {
    CHECK(stat.correct == r2.per_template.at(code).correct);
    CHECK(stat.total == r2.per_template.at(code).total);
    bucket_total += stat.total;
  }
  CHECK(bucket_total == r1.n);
}

TEST_CASE("evaluate rejects a dataset whose shape does not match the model") {
  std::string data_dir = gen_dataset("mismatch_data", 10, 41, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");
  ModelConfig cfg = config_for(reader.manifest());
  cfg.dims.d = 20;
  ModelParams params = ModelParams::init(cfg, 1);
  try {
    evaluate(params, cfg, reader);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(message_mentions(e, "d=20"));
    CHECK(message_mentions(e, "d=12"));
  }
}

TEST_CASE("a zeroed answer map scores at chance on the yes/no bucket") {
  std::string data_dir = gen_dataset("chance_data", 2500, 42, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");
  REQUIRE(reader.size() == 2000);

  ModelConfig cfg = config_for(reader.manifest());
  ModelParams params = ModelParams::init(cfg, 0);
  params.head.out.w.values().setZero();
  params.head.out.b.values().setZero();
  EvalReport report = evaluate(params, cfg, reader);

  const TemplateStat& exist = report.per_template.at('E');
  CHECK(exist.total >= 400);
  double yes_rate = static_cast<double>(exist.correct) / static_cast<double>(exist.total);
  CHECK(yes_rate >= 0.4);
  CHECK(yes_rate <= 0.6);
  const TemplateStat& count = report.per_template.at('C');
  CHECK(count.correct == 0);
}

TEST_CASE("an oracle that always matches the stored answers scores 1.0") {
  Dims dims;
  dims.t = 2;
  dims.p = 2;
  dims.l_max = 4;
  dims.d_a = 3;
  dims.d = 6;
  dims.c = 2;
  Vocabulary vocab = Vocabulary::make(dims.c);
  std::vector<FeatureBundle> bundles;
  for (int i = 0; i < 6; ++i) {
    char code = i % 2 ? 'C' : 'E';
    char id[32];
    std::snprintf(id, sizeof id, "scene_%06d-%c", i, code);
    bundles.push_back(blank_bundle(dims, id, ans::yes));
  }
  std::string dir = temp_dir("oracle_data");
  write_dataset(bundles, dims, static_cast<uint32_t>(vocab.question_words.size()), vocab.answers,
                dir + "/all.sasr");
  DatasetReader reader(dir + "/all.sasr");

  ModelConfig cfg = config_for(reader.manifest());
  ModelParams params = ModelParams::init(cfg, 2);
  params.head.out.w.values().setZero();
  params.head.out.b.values().setZero();
  EvalReport report = evaluate(params, cfg, reader);
  CHECK(report.n == 6);
  CHECK(report.correct == 6);
  CHECK(report.accuracy == 1.0);
  CHECK(report.per_template.at('E').total == 3);
  CHECK(report.per_template.at('C').total == 3);
}

TEST_CASE("a non-finite feature aborts training with the global step in the message") {
  Dims dims;
  dims.t = 2;
  dims.p = 2;
  dims.l_max = 4;
  dims.d_a = 3;
  dims.d = 6;
  dims.c = 2;
  Vocabulary vocab = Vocabulary::make(dims.c);
  std::vector<FeatureBundle> bundles;
  for (int i = 0; i < 4; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "scene_%06d-E", i);
    bundles.push_back(blank_bundle(dims, id, ans::yes));
  }
  bundles[1].audio_raw.values()(0) = std::numeric_limits<Scalar>::quiet_NaN();
  std::string dir = temp_dir("abort_data");
  write_dataset(bundles, dims, static_cast<uint32_t>(vocab.question_words.size()), vocab.answers,
                dir + "/train.sasr");
  DatasetReader reader(dir + "/train.sasr");

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 1;
  try {
    train(reader, cfg, temp_dir("abort_out"));
    FAIL("expected NumericAbortError");
  } catch (const NumericAbortError& e) {
    CHECK(message_mentions(e, "step 0"));
    CHECK(message_mentions(e, "l_avqa"));
  }
}

TEST_CASE("one generic step reaches every parameter group") {
  std::string data_dir = gen_dataset("reach_data", 10, 51, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");
  REQUIRE(reader.size() >= 4);
  std::vector<FeatureBundle> batch;
  for (Index i = 0; i < 4; ++i) batch.push_back(reader.load(i));

  ModelConfig cfg = config_for(reader.manifest());
  ModelParams params = ModelParams::init(cfg, 6);
  Tape tape;
  BatchLoss loss = batch_loss(tape, params, cfg, batch, 17, 0.5, 0.5, 0.5);
  tape.backward(loss.bundle.total);

  for (auto& [name, tensor] : params.named()) {
    CAPTURE(name);
    REQUIRE(tensor.has_grad());
    CHECK(tensor.grad().abs().maxCoeff() > 0.0);
  }
}

TEST_CASE("zero loss weights train bit-identically to the answer loss alone") {
  std::string data_dir = gen_dataset("lambda_data", 10, 61, small_dims());
  DatasetReader reader(data_dir + "/train.sasr");
  std::vector<FeatureBundle> batch;
  for (Index i = 0; i < 4; ++i) batch.push_back(reader.load(i));
  ModelConfig cfg = config_for(reader.manifest());

  ModelParams p1 = ModelParams::init(cfg, 8);
  {
    Tape tape;
    BatchLoss loss = batch_loss(tape, p1, cfg, batch, 23, 0, 0, 0);
    tape.backward(loss.bundle.total);
    Adam adam;
    auto named = p1.named();
    adam.step(named, 1e-3);
  }

  ModelParams p2 = ModelParams::init(cfg, 8);
  {
    Tape tape;
    Tensor avqa;
    for (const FeatureBundle& s : batch) {
      SampleForward fw = forward_sample(tape, p2, cfg, s);
      Tensor term = loss_avqa(tape, fw.pred, static_cast<Index>(s.answer_id));
      avqa = avqa.valid() ? add(tape, avqa, term) : term;
    }
    avqa = scale(tape, avqa, 0.25);
    tape.backward(avqa);
    Adam adam;
    auto named = p2.named();
    adam.step(named, 1e-3);
  }

  auto a = p1.named();
  auto b = p2.named();
  for (size_t i = 0; i < a.size(); ++i) {
    CAPTURE(a[i].name);
    CHECK(same_bits(a[i].tensor, b[i].tensor));
  }
}

TEST_CASE("end-to-end batch loss gradient matches finite differences") {
  Dims dims;
  dims.t = 2;
  dims.p = 3;
  dims.l_max = 6;
  dims.d_a = 4;
  dims.d = 6;
  dims.c = 2;
  std::string data_dir = gen_dataset("fd_data", 10, 71, dims);
  DatasetReader reader(data_dir + "/train.sasr");
  std::vector<FeatureBundle> batch;
  for (Index i = 0; i < 2; ++i) batch.push_back(reader.load(i));

  ModelConfig cfg = config_for(reader.manifest());
  ModelParams params = ModelParams::init(cfg, 14);
  std::vector<GradCheckParam> check_params;
  for (auto& [name, tensor] : params.named()) check_params.push_back({name, tensor});
  auto f = [&](Tape& tape) {
    return batch_loss(tape, params, cfg, batch, 29, 0.5, 0.5, 0.5).bundle.total;
  };
  auto report = grad_check(f, check_params, 1e-5, 200, 81, 1e-6);
  CAPTURE(report.worst_param);
  CAPTURE(report.ad);
  CAPTURE(report.fd);
  CHECK(report.compared == 200);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad_check resolution screen compares exactly the requested count") {
  Tensor live = random_param({4}, 901);
  Tensor faint = random_param({4}, 902);
  Tensor weights = Tensor::from({4}, {1.0, 1.0, 1.0, 1.0});
  Tensor tiny = Tensor::full({4}, 1e-10);
  std::vector<GradCheckParam> params{{"live", live}, {"faint", faint}};
  auto f = [&](Tape& tape) {
    Tensor strong = sum_all(tape, mul(tape, live, weights));
    Tensor weak = sum_all(tape, mul(tape, faint, tiny));
    return add(tape, add(tape, strong, weak), Tensor::scalar(10.0));
  };
  auto screened = grad_check(f, params, 1e-5, 40, 7, 1e-6);
  CHECK(screened.compared == 40);
  CHECK(screened.max_rel_error < 1e-6);
  auto raw = grad_check(f, params, 1e-5, 40, 7);
  CHECK(raw.compared == 40);
  CHECK(raw.max_rel_error > 1e-4);
}
