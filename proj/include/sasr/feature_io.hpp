#pragma once

#include "sasr/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sasr {

/// Malformed file container (bad magic, unsupported version, bad header).
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structurally valid container with damaged or truncated payload.
struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dataset-wide dimensions: segments, grid cells, question length cap,
/// raw audio width, model width, source category count.
struct Dims {
  Index t = 8;
  Index p = 16;
  Index l_max = 12;
  Index d_a = 32;
  Index d = 64;
  Index c = 4;

  bool operator==(const Dims&) const = default;
};

/// One audio-visual question-answering sample.
struct FeatureBundle {
  std::string sample_id;
  Tensor audio_raw;    // t x d_a
  Tensor visual_vec;   // t x d
  Tensor visual_map;   // t x p x d
  std::vector<uint16_t> question_tokens;
  uint16_t answer_id = 0;
  std::vector<uint8_t> source_presence;  // length c, multi-hot
};

struct SampleRecord {
  std::string id;
  uint64_t offset = 0;
};

struct DatasetManifest {
  Dims dims;
  uint32_t question_vocab_size = 0;
  std::vector<std::string> answer_vocab;
  std::vector<SampleRecord> samples;
};

/// Serializes bundles to `path` in the SASR container format and writes a
/// JSON sidecar (`path` + ".json") with ids, dims, and the answer
/// vocabulary. All bundles must match `dims`.
void write_dataset(const std::vector<FeatureBundle>& bundles, const Dims& dims,
                   uint32_t question_vocab_size, const std::vector<std::string>& answer_vocab,
                   const std::string& path);

/// Parses the container header eagerly and keeps the file image in memory;
/// samples decode on demand. Safe to share across threads once constructed.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& path);

  const DatasetManifest& manifest() const { return manifest_; }
  Index size() const { return static_cast<Index>(manifest_.samples.size()); }
  FeatureBundle load(Index i) const;
  FeatureBundle load(const std::string& sample_id) const;
  bool contains(const std::string& sample_id) const;

 private:
  DatasetManifest manifest_;
  std::vector<uint8_t> blob_;
};

}  // namespace sasr
