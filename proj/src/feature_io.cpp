#include "sasr/feature_io.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little, "serialization assumes a little-endian host");

namespace sasr {

namespace {

constexpr uint8_t kMagic[4] = {0x53, 0x41, 0x53, 0x52};  // "SASR"
constexpr uint16_t kVersion = 1;

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { raw(&v, 2); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void bytes(const void* p, size_t n) { raw(p, n); }
  void str16(const std::string& s) {
    if (s.size() > 0xffff) throw ContractError("string too long to serialize: " + s.substr(0, 32));
    u16(static_cast<uint16_t>(s.size()));
    raw(s.data(), s.size());
  }
  size_t size() const { return buf_.size(); }
  const std::vector<uint8_t>& data() const { return buf_; }

 private:
  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  std::vector<uint8_t> buf_;
};

class ByteReader {
 public:
  ByteReader(const std::vector<uint8_t>& buf, size_t at = 0) : buf_(buf), at_(at) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + at_, sizeof(T));
    at_ += sizeof(T);
    return v;
  }
  std::string str16() {
    uint16_t n = get<uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + at_), n);
    at_ += n;
    return s;
  }
  bool fits(size_t n) const { return at_ + n <= buf_.size(); }
  size_t at() const { return at_; }

  std::string context;  // names the sample being decoded, for errors

 private:
  void need(size_t n) {
    if (!fits(n)) {
      if (context.empty()) throw FormatError("dataset header truncated");
      throw CorruptionError("truncated payload for sample " + context);
    }
  }
  const std::vector<uint8_t>& buf_;
  size_t at_;
};

void check_bundle(const FeatureBundle& b, const Dims& dims, uint32_t q_vocab, size_t n_answers) {
  auto expect = [&](const Tensor& t, Shape s, const char* field) {
    if (!t.valid() || !shape_eq(t.shape(), s))
      throw DimensionError("bundle " + b.sample_id + ": " + field + " must be " + shape_str(s) +
                           (t.valid() ? ", got " + shape_str(t.shape()) : ", got none"));
  };
  expect(b.audio_raw, {dims.t, dims.d_a}, "audio_raw");
  expect(b.visual_vec, {dims.t, dims.d}, "visual_vec");
  expect(b.visual_map, {dims.t, dims.p, dims.d}, "visual_map");
  if (b.question_tokens.empty() || static_cast<Index>(b.question_tokens.size()) > dims.l_max)
    throw ContractError("bundle " + b.sample_id + ": question length " + std::to_string(b.question_tokens.size()) +
                        " outside [1, " + std::to_string(dims.l_max) + "]");
  for (uint16_t tok : b.question_tokens)
    if (tok >= q_vocab) throw ContractError("bundle " + b.sample_id + ": token " + std::to_string(tok) + " outside vocabulary");
  if (b.answer_id >= n_answers)
    throw ContractError("bundle " + b.sample_id + ": answer id " + std::to_string(b.answer_id) + " outside vocabulary");
  if (static_cast<Index>(b.source_presence.size()) != dims.c)
    throw ContractError("bundle " + b.sample_id + ": presence vector must have length " + std::to_string(dims.c));
}

void put_tensor_f32(ByteWriter& w, const Tensor& t) {
  for (Index i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t.values()(i)));
}

Tensor get_tensor_f32(ByteReader& r, Shape shape) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.values()(i) = static_cast<Scalar>(r.get<float>());
  return t;
}

}  // namespace

void write_dataset(const std::vector<FeatureBundle>& bundles, const Dims& dims,
                   uint32_t question_vocab_size, const std::vector<std::string>& answer_vocab,
                   const std::string& path) {
  for (const auto& b : bundles) check_bundle(b, dims, question_vocab_size, answer_vocab.size());

  ByteWriter head;
  head.bytes(kMagic, 4);
  head.u16(kVersion);
  for (Index v : {dims.t, dims.p, dims.l_max, dims.d_a, dims.d, dims.c}) head.u32(static_cast<uint32_t>(v));
  head.u32(question_vocab_size);
  head.u16(static_cast<uint16_t>(answer_vocab.size()));
  for (const auto& a : answer_vocab) head.str16(a);
  head.u32(static_cast<uint32_t>(bundles.size()));

  size_t index_bytes = 0;
  for (const auto& b : bundles) index_bytes += 2 + b.sample_id.size() + 8;
  uint64_t offset = head.size() + index_bytes;

  ByteWriter payloads;
  std::vector<uint64_t> offsets;
  offsets.reserve(bundles.size());
  for (const auto& b : bundles) {
    offsets.push_back(offset + payloads.size());
    put_tensor_f32(payloads, b.audio_raw);
    put_tensor_f32(payloads, b.visual_vec);
    put_tensor_f32(payloads, b.visual_map);
    payloads.u16(static_cast<uint16_t>(b.question_tokens.size()));
    for (uint16_t tok : b.question_tokens) payloads.u16(tok);
    payloads.u16(b.answer_id);
    for (uint8_t hot : b.source_presence) payloads.u8(hot);
  }
  for (size_t i = 0; i < bundles.size(); ++i) {
    head.str16(bundles[i].sample_id);
    head.u64(offsets[i]);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(head.data().data()), static_cast<std::streamsize>(head.size()));
  out.write(reinterpret_cast<const char*>(payloads.data().data()), static_cast<std::streamsize>(payloads.size()));
  if (!out) throw IoError("short write to " + path);
  out.close();

  nlohmann::json side;
  side["dims"] = {{"t", dims.t}, {"p", dims.p}, {"l_max", dims.l_max}, {"d_a", dims.d_a}, {"d", dims.d}, {"c", dims.c}};
  side["question_vocab_size"] = question_vocab_size;
  side["answer_vocab"] = answer_vocab;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& b : bundles) ids.push_back(b.sample_id);
  side["samples"] = std::move(ids);
  std::ofstream sout(path + ".json", std::ios::trunc);
  if (!sout) throw IoError("cannot open " + path + ".json for writing");
  sout << side.dump(2) << "\n";
}

DatasetReader::DatasetReader(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw IoError("cannot open " + path);
  auto n = static_cast<size_t>(in.tellg());
  in.seekg(0);
  blob_.resize(n);
  in.read(reinterpret_cast<char*>(blob_.data()), static_cast<std::streamsize>(n));
  if (!in) throw IoError("failed reading " + path);

  ByteReader r(blob_);
  uint8_t magic[4];
  for (auto& m : magic) m = r.get<uint8_t>();
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError(path + ": bad magic, not a SASR dataset");
  uint16_t version = r.get<uint16_t>();
  if (version != kVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " (expected " + std::to_string(kVersion) + ")");

  auto dim = [&]() { return static_cast<Index>(r.get<uint32_t>()); };
  manifest_.dims = Dims{dim(), dim(), dim(), dim(), dim(), dim()};
  manifest_.question_vocab_size = r.get<uint32_t>();
  uint16_t n_answers = r.get<uint16_t>();
  manifest_.answer_vocab.reserve(n_answers);
  for (uint16_t i = 0; i < n_answers; ++i) manifest_.answer_vocab.push_back(r.str16());
  uint32_t n_samples = r.get<uint32_t>();
  manifest_.samples.reserve(n_samples);
  for (uint32_t i = 0; i < n_samples; ++i) {
    SampleRecord rec;
    rec.id = r.str16();
    rec.offset = r.get<uint64_t>();
    if (rec.offset >= blob_.size()) throw FormatError(path + ": offset for sample " + rec.id + " outside the file");
    manifest_.samples.push_back(std::move(rec));
  }
}

FeatureBundle DatasetReader::load(Index i) const {
  if (i < 0 || i >= size()) throw ContractError("sample index " + std::to_string(i) + " outside dataset of " + std::to_string(size()));
  const auto& rec = manifest_.samples[static_cast<size_t>(i)];
  const Dims& dims = manifest_.dims;
  ByteReader r(blob_, rec.offset);
  r.context = rec.id;

  FeatureBundle b;
  b.sample_id = rec.id;
  b.audio_raw = get_tensor_f32(r, {dims.t, dims.d_a});
  b.visual_vec = get_tensor_f32(r, {dims.t, dims.d});
  b.visual_map = get_tensor_f32(r, {dims.t, dims.p, dims.d});
  uint16_t qlen = r.get<uint16_t>();
  if (qlen == 0 || static_cast<Index>(qlen) > dims.l_max)
    throw CorruptionError("sample " + rec.id + ": question length " + std::to_string(qlen) + " outside [1, " +
                          std::to_string(dims.l_max) + "]");
  b.question_tokens.reserve(qlen);
  for (uint16_t k = 0; k < qlen; ++k) b.question_tokens.push_back(r.get<uint16_t>());
  b.answer_id = r.get<uint16_t>();
  b.source_presence.resize(static_cast<size_t>(dims.c));
  for (auto& hot : b.source_presence) hot = r.get<uint8_t>();

  for (uint16_t tok : b.question_tokens)
    if (tok >= manifest_.question_vocab_size) throw CorruptionError("sample " + rec.id + ": token outside vocabulary");
  if (b.answer_id >= manifest_.answer_vocab.size()) throw CorruptionError("sample " + rec.id + ": answer outside vocabulary");
  return b;
}

FeatureBundle DatasetReader::load(const std::string& sample_id) const {
  for (Index i = 0; i < size(); ++i)
    if (manifest_.samples[static_cast<size_t>(i)].id == sample_id) return load(i);
  throw ContractError("sample " + sample_id + " not in dataset");
}

bool DatasetReader::contains(const std::string& sample_id) const {
  for (const auto& rec : manifest_.samples)
    if (rec.id == sample_id) return true;
  return false;
}

}  // namespace sasr
