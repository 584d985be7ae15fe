#pragma once

#include "sasr/feature_io.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace sasr {

/// Question-word ids are fixed by position; category names follow from
/// qtok::cat0. Answer ids likewise, categories from ans::cat0.
namespace qtok {
constexpr uint16_t is = 0, source = 1, sounding = 2, how = 3, many = 4, sources = 5, are = 6,
                   where = 7, which = 8, sounds = 9, first = 10, cat0 = 11;
}
namespace ans {
constexpr uint16_t yes = 0, no = 1, one = 2, two = 3, three = 4, left = 5, right = 6, cat0 = 7;
}

struct Vocabulary {
  std::vector<std::string> question_words;
  std::vector<std::string> answers;

  static Vocabulary make(Index c);

  Index categories() const { return static_cast<Index>(answers.size()) - ans::cat0; }
  uint16_t category_question_id(Index cat) const { return static_cast<uint16_t>(qtok::cat0 + cat); }
  uint16_t category_answer_id(Index cat) const { return static_cast<uint16_t>(ans::cat0 + cat); }
  const std::string& category_name(Index cat) const { return answers[static_cast<size_t>(ans::cat0 + cat)]; }
};

enum class Template : uint8_t { exist = 0, count = 1, local = 2, temporal = 3 };

char template_code(Template t);

/// Parses the trailing "-E|-C|-L|-T" of a sample id.
Template template_of(const std::string& sample_id);

struct SourceSpec {
  Index category = 0;   // 0..c-1
  Index cell = 0;       // 0..p-1, distinct across sources
  Index start = 0;      // 0..t-1, distinct across sources
  Index len = 1;        // 1..t-start
};

/// Ground truth for one scene; everything about the sample derives from it.
struct SceneSpec {
  std::string scene_id;
  std::vector<SourceSpec> sources;
  uint64_t noise_seed = 0;

  bool is_active(Index category) const;
  bool is_sounding(Index category, Index t) const;
  Index count_sounding_anywhere() const { return static_cast<Index>(sources.size()); }
};

/// Per-category signature vectors, unit-norm rows with pairwise cosine
/// similarity below 0.5.
struct PrototypeBank {
  Tensor audio_proto;   // c x d_a
  Tensor visual_proto;  // c x d

  static PrototypeBank make(const Dims& dims, uint64_t seed);
};

struct GenConfig {
  Dims dims;
  Index n = 100;
  uint64_t seed = 42;
  Scalar noise_sigma = 0.1;
};

/// Draws sources (1-3, capped by c), distinct cells, and contiguous
/// sounding intervals with distinct starts.
SceneSpec make_scene_spec(const Dims& dims, Index scene_index, uint64_t seed);

/// Renders question tokens and the answer id for one template.
/// The temporal template requires at least two sources.
std::pair<std::vector<uint16_t>, uint16_t> instantiate_question(const SceneSpec& spec, Template tpl,
                                                                const Vocabulary& vocab, const Dims& dims);

/// Renders the full sample: planted audio/visual features plus the
/// instantiated question. The sample id is scene_id plus the template code.
FeatureBundle generate_scene(const SceneSpec& spec, const PrototypeBank& protos, Scalar noise_sigma,
                             Template tpl, const Dims& dims, const Vocabulary& vocab);

/// Template actually used for a scene: cycles E,C,L,T by index and falls
/// back to the count template when the temporal one is inapplicable.
Template pick_template(const SceneSpec& spec, Index scene_index);

struct DatasetSummary {
  size_t n_train = 0;
  size_t n_test = 0;
  std::map<char, size_t> per_template;
};

/// Generates n scenes, splits them 80/20 by sample-id hash rank, and writes
/// train.sasr and test.sasr (plus JSON sidecars) under out_dir.
DatasetSummary generate_dataset(const GenConfig& cfg, const std::string& out_dir);

}  // namespace sasr
