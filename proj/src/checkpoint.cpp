#include "sasr/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace sasr {

namespace {

using nlohmann::json;

json dims_to_json(const Dims& d) {
  return json{{"t", d.t}, {"p", d.p}, {"l_max", d.l_max}, {"d_a", d.d_a}, {"d", d.d}, {"c", d.c}};
}

Dims dims_from_json(const json& j) {
  Dims d;
  d.t = j.at("t").get<Index>();
  d.p = j.at("p").get<Index>();
  d.l_max = j.at("l_max").get<Index>();
  d.d_a = j.at("d_a").get<Index>();
  d.d = j.at("d").get<Index>();
  d.c = j.at("c").get<Index>();
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const ModelConfig& config,
                     int64_t step, int64_t epoch, uint64_t seed) {
  std::vector<NamedTensor> named = params.named();
  json header{
      {"dims", dims_to_json(config.dims)},
      {"question_vocab", config.question_vocab},
      {"answer_count", config.answer_count},
      {"slt_on", config.slt_on},
      {"sasr_on", config.sasr_on},
      {"sa_on", config.sa_on},
      {"ta_on", config.ta_on},
      {"layer_norm", config.layer_norm},
      {"step", step},
      {"epoch", epoch},
      {"seed", seed},
      {"tensors", named.size()},
  };
  const std::string head = header.dump();
  if (head.size() > 0xffffffffull) throw ContractError("save_checkpoint: header too large");

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  uint32_t head_len = static_cast<uint32_t>(head.size());
  out.write(reinterpret_cast<const char*>(&head_len), 4);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  for (const auto& [name, tensor] : named) {
    if (name.size() > 0xffff) throw ContractError("save_checkpoint: name too long: " + name);
    uint16_t name_len = static_cast<uint16_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), 2);
    out.write(name.data(), name_len);
    uint8_t rank = static_cast<uint8_t>(tensor.rank());
    out.write(reinterpret_cast<const char*>(&rank), 1);
    for (Index i = 0; i < tensor.rank(); ++i) {
      uint32_t dim = static_cast<uint32_t>(tensor.dim(i));
      out.write(reinterpret_cast<const char*>(&dim), 4);
    }
    out.write(reinterpret_cast<const char*>(tensor.values().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(Scalar)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::vector<uint8_t> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("failed reading checkpoint " + path);

  size_t at = 0;
  auto need = [&](size_t n, const char* what) {
    if (at + n > blob.size()) throw FormatError(std::string("checkpoint truncated reading ") + what);
  };
  auto get_raw = [&](void* p, size_t n, const char* what) {
    need(n, what);
    std::memcpy(p, blob.data() + at, n);
    at += n;
  };

  uint32_t head_len = 0;
  get_raw(&head_len, 4, "header length");
  need(head_len, "header");
  json header;
  try {
    header = json::parse(blob.begin() + static_cast<ptrdiff_t>(at),
                         blob.begin() + static_cast<ptrdiff_t>(at + head_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  at += head_len;

  Checkpoint ck;
  try {
    ck.config.dims = dims_from_json(header.at("dims"));
    ck.config.question_vocab = header.at("question_vocab").get<Index>();
    ck.config.answer_count = header.at("answer_count").get<Index>();
    ck.config.slt_on = header.at("slt_on").get<bool>();
    ck.config.sasr_on = header.at("sasr_on").get<bool>();
    ck.config.sa_on = header.at("sa_on").get<bool>();
    ck.config.ta_on = header.at("ta_on").get<bool>();
    ck.config.layer_norm = header.at("layer_norm").get<bool>();
    ck.step = header.at("step").get<int64_t>();
    ck.epoch = header.at("epoch").get<int64_t>();
    ck.seed = header.at("seed").get<uint64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header missing fields: ") + e.what());
  }
  const size_t expect_tensors = header.value("tensors", size_t{0});

  ck.params = ModelParams::init(ck.config, ck.seed);
  std::vector<NamedTensor> named = ck.params.named();
  std::vector<bool> filled(named.size(), false);

  size_t records = 0;
  while (at < blob.size()) {
    uint16_t name_len = 0;
    get_raw(&name_len, 2, "tensor name length");
    need(name_len, "tensor name");
    std::string name(reinterpret_cast<const char*>(blob.data() + at), name_len);
    at += name_len;
    uint8_t rank = 0;
    get_raw(&rank, 1, name.c_str());
    Shape shape(rank);
    for (uint8_t i = 0; i < rank; ++i) {
      uint32_t dim = 0;
      get_raw(&dim, 4, name.c_str());
      shape[i] = static_cast<Index>(dim);
    }

    size_t slot = named.size();
    for (size_t i = 0; i < named.size(); ++i)
      if (named[i].name == name) slot = i;
    if (slot == named.size()) throw CorruptionError("checkpoint carries unknown tensor " + name);
    if (filled[slot]) throw CorruptionError("checkpoint repeats tensor " + name);
    Tensor& target = named[slot].tensor;
    if (!shape_eq(shape, target.shape()))
      throw CorruptionError("checkpoint tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(target.shape()));
    get_raw(target.values().data(), static_cast<size_t>(target.size()) * sizeof(Scalar), name.c_str());
    filled[slot] = true;
    ++records;
  }
  for (size_t i = 0; i < named.size(); ++i)
    if (!filled[i]) throw CorruptionError("checkpoint is missing tensor " + named[i].name);
  if (expect_tensors != 0 && records != expect_tensors)
    throw CorruptionError("checkpoint header promises " + std::to_string(expect_tensors) + " tensors, found " +
                          std::to_string(records));
  return ck;
}

}  // namespace sasr
