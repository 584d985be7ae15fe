#include "sasr/synth_gen.hpp"

#include "sasr/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <numeric>

namespace sasr {

namespace {

const char* kQuestionWords[] = {"is", "source", "sounding", "how", "many", "sources",
                                "are", "where", "which", "sounds", "first"};
const char* kAnswers[] = {"yes", "no", "1", "2", "3", "left", "right"};
const char* kCategoryNames[] = {"guitar", "piano", "violin", "drum", "flute", "cello", "trumpet", "harp"};

std::string category_label(Index cat) {
  if (cat < static_cast<Index>(std::size(kCategoryNames))) return kCategoryNames[cat];
  return "cat" + std::to_string(cat);
}

/// First k entries of a seeded permutation of 0..n-1.
std::vector<Index> draw_distinct(Rng& rng, Index n, Index k) {
  std::vector<Index> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), Index{0});
  for (Index i = 0; i < k; ++i) {
    Index j = i + static_cast<Index>(rng.below(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(k));
  return pool;
}

}  // namespace

Vocabulary Vocabulary::make(Index c) {
  Vocabulary v;
  v.question_words.assign(std::begin(kQuestionWords), std::end(kQuestionWords));
  v.answers.assign(std::begin(kAnswers), std::end(kAnswers));
  for (Index cat = 0; cat < c; ++cat) {
    v.question_words.push_back(category_label(cat));
    v.answers.push_back(category_label(cat));
  }
  return v;
}

char template_code(Template t) {
  switch (t) {
    case Template::exist: return 'E';
    case Template::count: return 'C';
    case Template::local: return 'L';
    case Template::temporal: return 'T';
  }
  throw ContractError("unknown template");
}

Template template_of(const std::string& sample_id) {
  if (sample_id.size() >= 2 && sample_id[sample_id.size() - 2] == '-') {
    switch (sample_id.back()) {
      case 'E': return Template::exist;
      case 'C': return Template::count;
      case 'L': return Template::local;
      case 'T': return Template::temporal;
      default: break;
    }
  }
  throw ContractError("sample id " + sample_id + " has no template suffix");
}

bool SceneSpec::is_active(Index category) const {
  for (const auto& s : sources)
    if (s.category == category) return true;
  return false;
}

bool SceneSpec::is_sounding(Index category, Index t) const {
  for (const auto& s : sources)
    if (s.category == category && t >= s.start && t < s.start + s.len) return true;
  return false;
}

PrototypeBank PrototypeBank::make(const Dims& dims, uint64_t seed) {
  Rng rng(seed);
  auto draw_bank = [&rng](Index c, Index width) {
    Tensor bank = Tensor::zeros({c, width});
    for (Index row = 0; row < c; ++row) {
      bool accepted = false;
      while (!accepted) {
        auto v = bank.values().segment(row * width, width);
        for (Index k = 0; k < width; ++k) v(k) = rng.uniform(-1.0, 1.0);
        Scalar norm = std::sqrt((v * v).sum());
        if (norm < 1e-9) continue;
        v /= norm;
        accepted = true;
        for (Index prev = 0; prev < row && accepted; ++prev) {
          Scalar cos = (v * bank.values().segment(prev * width, width)).sum();
          if (std::abs(cos) >= 0.5) accepted = false;
        }
      }
    }
    return bank;
  };
  PrototypeBank protos;
  protos.audio_proto = draw_bank(dims.c, dims.d_a);
  protos.visual_proto = draw_bank(dims.c, dims.d);
  return protos;
}

SceneSpec make_scene_spec(const Dims& dims, Index scene_index, uint64_t seed) {
  Rng rng(mix_seed(seed, static_cast<uint64_t>(scene_index)));
  SceneSpec spec;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06lld", static_cast<long long>(scene_index));
  spec.scene_id = buf;

  Index max_k = std::min<Index>({3, dims.c, dims.p, dims.t});
  Index k = 1 + static_cast<Index>(rng.below(static_cast<uint64_t>(max_k)));
  std::vector<Index> cats = draw_distinct(rng, dims.c, k);
  std::vector<Index> cells = draw_distinct(rng, dims.p, k);
  std::vector<Index> starts = draw_distinct(rng, dims.t, k);
  for (Index i = 0; i < k; ++i) {
    SourceSpec s;
    s.category = cats[static_cast<size_t>(i)];
    s.cell = cells[static_cast<size_t>(i)];
    s.start = starts[static_cast<size_t>(i)];
    s.len = 1 + static_cast<Index>(rng.below(static_cast<uint64_t>(dims.t - s.start)));
    spec.sources.push_back(s);
  }
  spec.noise_seed = rng.next_u64();
  return spec;
}

std::pair<std::vector<uint16_t>, uint16_t> instantiate_question(const SceneSpec& spec, Template tpl,
                                                                const Vocabulary& vocab, const Dims& dims) {
  Rng rng(mix_seed(spec.noise_seed, static_cast<uint64_t>(tpl)));
  const auto& sources = spec.sources;
  switch (tpl) {
    case Template::exist: {
      std::vector<Index> inactive;
      for (Index cat = 0; cat < dims.c; ++cat)
        if (!spec.is_active(cat)) inactive.push_back(cat);
      bool ask_active = inactive.empty() || rng.uniform() < 0.5;
      Index cat = ask_active ? sources[rng.below(sources.size())].category
                             : inactive[rng.below(inactive.size())];
      std::vector<uint16_t> tokens{qtok::is, qtok::source, vocab.category_question_id(cat), qtok::sounding};
      return {tokens, ask_active ? ans::yes : ans::no};
    }
    case Template::count: {
      if (sources.size() > 3) throw ContractError("count template supports at most 3 sources");
      std::vector<uint16_t> tokens{qtok::how, qtok::many, qtok::sources, qtok::are, qtok::sounding};
      return {tokens, static_cast<uint16_t>(ans::one + sources.size() - 1)};
    }
    case Template::local: {
      Index cat = sources[rng.below(sources.size())].category;
      Index cell = 0;
      for (const auto& s : sources)
        if (s.category == cat) cell = s.cell;
      std::vector<uint16_t> tokens{qtok::where, qtok::is, qtok::source, vocab.category_question_id(cat)};
      return {tokens, cell < dims.p / 2 ? ans::left : ans::right};
    }
    case Template::temporal: {
      if (sources.size() < 2) throw ContractError("temporal template needs at least two sources");
      const SourceSpec* first = &sources[0];
      for (const auto& s : sources)
        if (s.start < first->start) first = &s;
      std::vector<uint16_t> tokens{qtok::which, qtok::source, qtok::sounds, qtok::first};
      return {tokens, vocab.category_answer_id(first->category)};
    }
  }
  throw ContractError("unknown template");
}

FeatureBundle generate_scene(const SceneSpec& spec, const PrototypeBank& protos, Scalar noise_sigma,
                             Template tpl, const Dims& dims, const Vocabulary& vocab) {
  Rng rng(spec.noise_seed);
  FeatureBundle b;
  b.sample_id = spec.scene_id + "-" + template_code(tpl);
  b.audio_raw = Tensor::zeros({dims.t, dims.d_a});
  b.visual_vec = Tensor::zeros({dims.t, dims.d});
  b.visual_map = Tensor::zeros({dims.t, dims.p, dims.d});

  for (Index t = 0; t < dims.t; ++t) {
    auto row = b.audio_raw.values().segment(t * dims.d_a, dims.d_a);
    for (const auto& s : spec.sources)
      if (t >= s.start && t < s.start + s.len) row += protos.audio_proto.values().segment(s.category * dims.d_a, dims.d_a);
    if (noise_sigma > 0)
      for (Index k = 0; k < dims.d_a; ++k) row(k) += noise_sigma * rng.normal();
  }

  for (Index t = 0; t < dims.t; ++t) {
    for (Index p = 0; p < dims.p; ++p) {
      auto cellvec = b.visual_map.values().segment((t * dims.p + p) * dims.d, dims.d);
      for (const auto& s : spec.sources)
        if (s.cell == p) cellvec += protos.visual_proto.values().segment(s.category * dims.d, dims.d);
      if (noise_sigma > 0)
        for (Index k = 0; k < dims.d; ++k) cellvec(k) += noise_sigma * rng.normal();
    }
    auto mean = b.visual_vec.values().segment(t * dims.d, dims.d);
    for (Index p = 0; p < dims.p; ++p) mean += b.visual_map.values().segment((t * dims.p + p) * dims.d, dims.d);
    mean /= static_cast<Scalar>(dims.p);
  }

  b.source_presence.assign(static_cast<size_t>(dims.c), 0);
  for (const auto& s : spec.sources) b.source_presence[static_cast<size_t>(s.category)] = 1;

  auto [tokens, answer] = instantiate_question(spec, tpl, vocab, dims);
  b.question_tokens = std::move(tokens);
  b.answer_id = answer;
  return b;
}

Template pick_template(const SceneSpec& spec, Index scene_index) {
  auto tpl = static_cast<Template>(scene_index % 4);
  if (tpl == Template::temporal && spec.sources.size() < 2) return Template::count;
  return tpl;
}

DatasetSummary generate_dataset(const GenConfig& cfg, const std::string& out_dir) {
  if (cfg.n < 1) throw ContractError("generate_dataset: n must be >= 1");
  const Dims& dims = cfg.dims;
  Vocabulary vocab = Vocabulary::make(dims.c);
  PrototypeBank protos = PrototypeBank::make(dims, mix_seed(cfg.seed, 0x70726f746full));

  std::vector<FeatureBundle> bundles;
  bundles.reserve(static_cast<size_t>(cfg.n));
  DatasetSummary summary;
  for (Index i = 0; i < cfg.n; ++i) {
    SceneSpec spec = make_scene_spec(dims, i, cfg.seed);
    Template tpl = pick_template(spec, i);
    bundles.push_back(generate_scene(spec, protos, cfg.noise_sigma, tpl, dims, vocab));
    summary.per_template[template_code(tpl)]++;
  }

  // Largest fifth by id-hash rank goes to test; files keep scene order.
  std::vector<size_t> order(bundles.size());
  std::iota(order.begin(), order.end(), size_t{0});
  auto rank = [&](size_t i) { return splitmix64(fnv1a64(bundles[i].sample_id)); };
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    uint64_t ra = rank(a), rb = rank(b);
    if (ra != rb) return ra > rb;
    return bundles[a].sample_id < bundles[b].sample_id;
  });
  size_t n_test = bundles.size() / 5;
  std::vector<bool> in_test(bundles.size(), false);
  for (size_t i = 0; i < n_test; ++i) in_test[order[i]] = true;

  std::vector<FeatureBundle> train, test;
  for (size_t i = 0; i < bundles.size(); ++i) (in_test[i] ? test : train).push_back(std::move(bundles[i]));
  summary.n_train = train.size();
  summary.n_test = test.size();

  std::filesystem::create_directories(out_dir);
  auto q_vocab = static_cast<uint32_t>(vocab.question_words.size());
  write_dataset(train, dims, q_vocab, vocab.answers, (std::filesystem::path(out_dir) / "train.sasr").string());
  write_dataset(test, dims, q_vocab, vocab.answers, (std::filesystem::path(out_dir) / "test.sasr").string());
  return summary;
}

}  // namespace sasr
