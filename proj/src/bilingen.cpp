#include "concner/bilingen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "concner/config.hpp"
#include "concner/error.hpp"
#include "concner/rng.hpp"

namespace concner {

namespace {

// Chunks drift by at most floor(kReorderWindow) positions.
constexpr double kReorderWindow = 2.5;
// Entity and filler words are drawn with Zipfian frequencies.
constexpr double kZipfExponent = 1.0;
constexpr double kNoEntityRate = 0.1;
constexpr std::size_t kMaxResample = 200;
constexpr std::size_t kMaxTestAttempts = 1000;

const char* const kSourceSyllables[] = {"ka", "lo", "mi", "nu", "pe", "ri",
                                        "sa", "to", "vu", "ze", "ba", "do"};
const char* const kTargetSyllables[] = {"gu", "he", "ji", "ky", "ma", "ne",
                                        "po", "qi", "ru", "sy", "wa", "xo"};
constexpr std::size_t kSyllables = 12;

std::string pseudo_word(std::size_t index, std::size_t n_syllables, const char* const* table,
                        bool capitalize) {
  std::string w;
  for (std::size_t k = 0; k < n_syllables; ++k) {
    w += table[index % kSyllables];
    index /= kSyllables;
  }
  if (capitalize) w[0] = static_cast<char>(w[0] - 'a' + 'A');
  return w;
}

class ZipfSampler {
 public:
  explicit ZipfSampler(std::size_t n) : cumulative_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(static_cast<double>(r + 1), kZipfExponent);
      cumulative_[r] = acc;
    }
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

struct Template {
  std::vector<std::size_t> left;
  std::vector<std::size_t> right;
};

// Lexeme inventory shared by both languages; only surface forms differ.
struct Lexicon {
  std::vector<std::string> src;
  std::vector<std::string> tgt;
  std::vector<std::vector<std::size_t>> gazetteer;  // per type
  std::vector<std::vector<Template>> templates;     // per type
  std::vector<std::size_t> fillers;
};

Lexicon build_lexicon(const GenConfig& cfg) {
  const std::size_t v = cfg.vocab_size_per_language;
  const std::size_t n_types = cfg.entity_types.size();
  std::size_t n_syl = 1;
  for (std::size_t cap = kSyllables; cap < v; cap *= kSyllables) ++n_syl;

  Lexicon lex;
  // Lexemes [0, n_entity) are entity words, then template triggers, then fillers.
  const std::size_t n_entity = n_types * cfg.gazetteer_size_per_type;
  const std::size_t n_trigger = n_types * cfg.templates_per_type * 2;

  Rng rng(cfg.seed, "lexicon");
  std::vector<std::size_t> surface_ids(v);
  std::iota(surface_ids.begin(), surface_ids.end(), 0);
  rng.shuffle(surface_ids);

  std::vector<std::size_t> order(v);
  std::iota(order.begin(), order.end(), 0);
  Rng overlap_rng(cfg.seed, "overlap");
  overlap_rng.shuffle(order);
  const auto n_shared = static_cast<std::size_t>(std::llround(cfg.overlap_fraction * static_cast<double>(v)));
  std::vector<bool> shared(v, false);
  for (std::size_t i = 0; i < n_shared; ++i) shared[order[i]] = true;

  for (std::size_t i = 0; i < v; ++i) {
    const bool entity = i < n_entity;
    lex.src.push_back(pseudo_word(surface_ids[i], n_syl, kSourceSyllables, entity));
    lex.tgt.push_back(shared[i] ? lex.src.back()
                                : pseudo_word(surface_ids[i], n_syl, kTargetSyllables, entity));
  }

  lex.gazetteer.resize(n_types);
  for (std::size_t t = 0; t < n_types; ++t)
    for (std::size_t g = 0; g < cfg.gazetteer_size_per_type; ++g)
      lex.gazetteer[t].push_back(t * cfg.gazetteer_size_per_type + g);

  Rng tpl_rng(cfg.seed, "templates");
  std::size_t next = n_entity;
  lex.templates.resize(n_types);
  for (std::size_t t = 0; t < n_types; ++t) {
    for (std::size_t j = 0; j < cfg.templates_per_type; ++j) {
      const std::size_t a = next++, b = next++;
      // Slot position: before, between or after the two trigger words.
      switch (tpl_rng.below(3)) {
        case 0: lex.templates[t].push_back({{}, {a, b}}); break;
        case 1: lex.templates[t].push_back({{a}, {b}}); break;
        default: lex.templates[t].push_back({{a, b}, {}}); break;
      }
    }
  }
  for (std::size_t i = n_entity + n_trigger; i < v; ++i) lex.fillers.push_back(i);
  return lex;
}

struct SourceSampler {
  const GenConfig& cfg;
  const Lexicon& lex;
  const LabelSet& labels;
  std::vector<ZipfSampler> entity_zipf;
  ZipfSampler filler_zipf;

  SourceSampler(const GenConfig& c, const Lexicon& l, const LabelSet& ls)
      : cfg(c), lex(l), labels(ls), filler_zipf(std::max<std::size_t>(l.fillers.size(), 1)) {
    for (const auto& g : lex.gazetteer) entity_zipf.emplace_back(g.size());
  }

  void push(LabeledSentence& s, std::size_t lexeme, LabelId label) const {
    s.tokens.push_back(lex.src[lexeme]);
    s.labels.push_back(label);
  }

  void fillers(LabeledSentence& s, Rng& rng, std::size_t max_count) const {
    if (lex.fillers.empty()) return;
    const std::size_t n = rng.below(max_count + 1);
    for (std::size_t k = 0; k < n; ++k) push(s, lex.fillers[filler_zipf(rng)], labels.outside());
  }

  LabeledSentence draw(Rng& rng, std::optional<std::size_t> forced_type) const {
    LabeledSentence s;
    if (!forced_type && !lex.fillers.empty() && rng.uniform() < kNoEntityRate) {
      const std::size_t n = rng.between(3, 8);
      for (std::size_t k = 0; k < n; ++k) push(s, lex.fillers[filler_zipf(rng)], labels.outside());
      return s;
    }
    const double u = rng.uniform();
    const std::size_t instances = u < 0.6 ? 1 : (u < 0.9 ? 2 : 3);
    for (std::size_t k = 0; k < instances; ++k) {
      fillers(s, rng, 2);
      const std::size_t type =
          (k == 0 && forced_type) ? *forced_type : rng.below(cfg.entity_types.size());
      const Template& tpl = lex.templates[type][rng.below(lex.templates[type].size())];
      const double lu = rng.uniform();
      const std::size_t length = lu < 0.5 ? 1 : (lu < 0.85 ? 2 : 3);
      for (auto w : tpl.left) push(s, w, labels.outside());
      for (std::size_t e = 0; e < length; ++e) {
        push(s, lex.gazetteer[type][entity_zipf[type](rng)],
             e == 0 ? labels.begin_of(type) : labels.inside_of(type));
      }
      for (auto w : tpl.right) push(s, w, labels.outside());
    }
    fillers(s, rng, 2);
    return s;
  }

  // Resamples until the sentence fits; falls back to the shortest template use.
  LabeledSentence sample(Rng& rng, std::optional<std::size_t> forced_type) const {
    for (std::size_t attempt = 0; attempt < kMaxResample; ++attempt) {
      LabeledSentence s = draw(rng, forced_type);
      if (s.size() <= cfg.max_sentence_len) return s;
    }
    const std::size_t type = forced_type.value_or(0);
    const Template& tpl = lex.templates[type].front();
    LabeledSentence s;
    for (auto w : tpl.left) push(s, w, labels.outside());
    push(s, lex.gazetteer[type].front(), labels.begin_of(type));
    for (auto w : tpl.right) push(s, w, labels.outside());
    return s;
  }
};

std::optional<std::size_t> forced(std::size_t index, std::size_t n_types) {
  return index < n_types ? std::optional<std::size_t>(index) : std::nullopt;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + p.string());
}

std::multiset<std::pair<std::size_t, std::size_t>> entity_shape(const LabeledSentence& s,
                                                               const LabelSet& ls) {
  std::multiset<std::pair<std::size_t, std::size_t>> out;
  for (const auto& e : extract_entities(s.labels, ls)) out.insert({e.type, e.length()});
  return out;
}

}  // namespace

void GenConfig::validate() const {
  auto field = [](const char* name, const std::string& why) {
    throw Error(ErrorCode::ConfigError, std::string(name) + ": " + why);
  };
  if (vocab_size_per_language < 1) field("vocab_size_per_language", "must be >= 1");
  if (!(overlap_fraction >= 0.0 && overlap_fraction <= 1.0)) {
    field("overlap_fraction", "must lie in [0, 1]");
  }
  if (entity_types.empty()) field("entity_types", "must name at least one type");
  if (gazetteer_size_per_type < 1) field("gazetteer_size_per_type", "must be >= 1");
  if (templates_per_type < 1) field("templates_per_type", "must be >= 1");
  if (n_train < 1) field("n_train", "must be >= 1");
  if (n_dev < 1) field("n_dev", "must be >= 1");
  if (n_unlabeled < 1) field("n_unlabeled", "must be >= 1");
  if (n_test < 1) field("n_test", "must be >= 1");
  if (max_sentence_len < 3) field("max_sentence_len", "must be >= 3");

  const std::size_t n_types = entity_types.size();
  const std::size_t needed = n_types * (gazetteer_size_per_type + 2 * templates_per_type);
  if (needed > vocab_size_per_language) {
    throw Error(ErrorCode::InfeasibleConfig,
                "gazetteers and templates need " + std::to_string(needed) +
                    " words but vocab_size_per_language is " +
                    std::to_string(vocab_size_per_language));
  }
  for (auto [name, n] : {std::pair{"n_train", n_train}, std::pair{"n_dev", n_dev},
                         std::pair{"n_unlabeled", n_unlabeled}, std::pair{"n_test", n_test}}) {
    if (n < n_types) {
      throw Error(ErrorCode::InfeasibleConfig,
                  std::string(name) + " must be >= the number of entity types so every type occurs");
    }
  }
}

std::vector<std::size_t> chunk_permutation(std::size_t n_chunks, std::uint64_t seed) {
  Rng rng(seed, "reorder");
  std::vector<std::pair<double, std::size_t>> keyed(n_chunks);
  for (std::size_t j = 0; j < n_chunks; ++j) {
    keyed[j] = {static_cast<double>(j) + rng.uniform(0.0, kReorderWindow), j};
  }
  std::stable_sort(keyed.begin(), keyed.end());
  std::vector<std::size_t> perm(n_chunks);
  for (std::size_t j = 0; j < n_chunks; ++j) perm[j] = keyed[j].second;
  return perm;
}

LabeledSentence translate_sentence(const LabeledSentence& s, const TokenMapping& mapping,
                                   std::uint64_t seed, const LabelSet& label_set) {
  const auto violations = validate_iob2(s.labels, label_set);
  if (!violations.empty()) {
    throw Error(ErrorCode::InvalidIOB2,
                "translate_sentence: position " + std::to_string(violations.front().position));
  }
  // Chunks: whole entities, single O tokens.
  std::vector<std::pair<std::size_t, std::size_t>> chunks;
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i + 1;
    if (label_set.tag(s.labels[i]) == Tag::Begin) {
      while (j < s.size() && label_set.tag(s.labels[j]) == Tag::Inside) ++j;
    }
    chunks.push_back({i, j});
    i = j;
  }
  LabeledSentence out;
  for (std::size_t c : chunk_permutation(chunks.size(), seed)) {
    for (std::size_t i = chunks[c].first; i < chunks[c].second; ++i) {
      auto it = mapping.find(s.tokens[i]);
      if (it == mapping.end()) {
        throw Error(ErrorCode::TokenNotInMapping,
                    "translate_sentence: token '" + s.tokens[i] + "' has no translation");
      }
      out.tokens.push_back(it->second);
      out.labels.push_back(s.labels[i]);
    }
  }
  return out;
}

BilingualCorpora generate(const GenConfig& cfg) {
  cfg.validate();
  const LabelSet labels = LabelSet::from_types(cfg.entity_types);
  const Lexicon lex = build_lexicon(cfg);
  const SourceSampler sampler(cfg, lex, labels);
  const std::size_t n_types = cfg.entity_types.size();

  BilingualCorpora out;
  for (std::size_t i = 0; i < lex.src.size(); ++i) out.mapping[lex.src[i]] = lex.tgt[i];
  out.d_src = Corpus{{}, labels, "src"};
  out.d_tgt = Corpus{{}, labels, "tgt"};
  out.d_dev = Corpus{{}, labels, "src"};
  out.d_unlabeled = Corpus{{}, labels, "tgt"};
  out.d_test = Corpus{{}, labels, "tgt"};

  for (std::size_t i = 0; i < cfg.n_train; ++i) {
    Rng rng(cfg.seed, "src", i);
    out.d_src.sentences.push_back(sampler.sample(rng, forced(i, n_types)));
    out.tgt_seeds.push_back(derive_seed(cfg.seed, "tgt-order", i));
    out.d_tgt.sentences.push_back(
        translate_sentence(out.d_src.sentences.back(), out.mapping, out.tgt_seeds.back(), labels));
  }
  for (std::size_t i = 0; i < cfg.n_dev; ++i) {
    Rng rng(cfg.seed, "dev", i);
    out.d_dev.sentences.push_back(sampler.sample(rng, forced(i, n_types)));
  }
  std::set<std::vector<std::string>> seen;
  for (const auto& s : out.d_tgt.sentences) seen.insert(s.tokens);
  for (std::size_t i = 0; i < cfg.n_unlabeled; ++i) {
    Rng rng(cfg.seed, "unlabeled", i);
    auto src = sampler.sample(rng, forced(i, n_types));
    out.d_unlabeled.sentences.push_back(
        translate_sentence(src, out.mapping, derive_seed(cfg.seed, "unlabeled-order", i), labels));
    seen.insert(out.d_unlabeled.sentences.back().tokens);
  }
  for (std::size_t i = 0; i < cfg.n_test; ++i) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < kMaxTestAttempts && !placed; ++attempt) {
      const std::uint64_t key = i * kMaxTestAttempts + attempt;
      Rng rng(cfg.seed, "test", key);
      auto src = sampler.sample(rng, forced(i, n_types));
      auto tgt = translate_sentence(src, out.mapping, derive_seed(cfg.seed, "test-order", key),
                                    labels);
      if (seen.count(tgt.tokens)) continue;
      out.d_test.sentences.push_back(std::move(tgt));
      placed = true;
    }
    if (!placed) {
      throw Error(ErrorCode::InfeasibleConfig,
                  "could not draw a test sentence disjoint from the training text");
    }
  }
  return out;
}

std::vector<std::string> check_bilingual(const BilingualCorpora& c) {
  std::vector<std::string> problems;
  const LabelSet& ls = c.d_src.label_set;
  auto check_valid = [&](const Corpus& corpus, const char* name) {
    try {
      check_corpus(corpus);
    } catch (const Error& e) {
      problems.push_back(std::string(name) + ": " + e.what());
    }
    std::vector<bool> has(ls.entity_types().size(), false);
    for (const auto& s : corpus.sentences)
      for (const auto& e : extract_entities(s.labels, corpus.label_set)) has[e.type] = true;
    for (std::size_t t = 0; t < has.size(); ++t) {
      if (!has[t]) problems.push_back(std::string(name) + ": no " + ls.entity_types()[t] + " entity");
    }
  };
  check_valid(c.d_src, "d_src");
  check_valid(c.d_tgt, "d_tgt");
  check_valid(c.d_unlabeled, "d_unlabeled");
  check_valid(c.d_test, "d_test");
  if (!c.d_dev.sentences.empty()) check_valid(c.d_dev, "d_dev");

  if (c.d_src.size() != c.d_tgt.size()) {
    problems.push_back("d_src and d_tgt differ in size");
    return problems;
  }
  const bool replay = !c.mapping.empty() && c.tgt_seeds.size() == c.d_src.size();
  for (std::size_t i = 0; i < c.d_src.size(); ++i) {
    if (entity_shape(c.d_src.sentences[i], ls) != entity_shape(c.d_tgt.sentences[i], ls)) {
      problems.push_back("pair " + std::to_string(i) + ": entity (type, length) multisets differ");
    }
    if (replay &&
        translate_sentence(c.d_src.sentences[i], c.mapping, c.tgt_seeds[i], ls) != c.d_tgt.sentences[i]) {
      problems.push_back("pair " + std::to_string(i) + ": translation does not replay");
    }
  }
  std::set<std::vector<std::string>> train_side;
  for (const auto& s : c.d_tgt.sentences) train_side.insert(s.tokens);
  for (const auto& s : c.d_unlabeled.sentences) train_side.insert(s.tokens);
  for (std::size_t i = 0; i < c.d_test.size(); ++i) {
    if (train_side.count(c.d_test.sentences[i].tokens)) {
      problems.push_back("test sentence " + std::to_string(i) + " also occurs in training text");
    }
  }
  return problems;
}

void write_bilingual(const std::filesystem::path& dir, const BilingualCorpora& c,
                     const GenConfig& config) {
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const Corpus*> files[] = {
      {"src.conll", &c.d_src},   {"tgt.conll", &c.d_tgt},   {"unlabeled.conll", &c.d_unlabeled},
      {"test.conll", &c.d_test}, {"dev.conll", &c.d_dev}};
  std::string manifest = "# generated corpora\n" + format_gen_config(config);
  for (const auto& [name, corpus] : files) {
    const std::string text = serialize_conll(*corpus);
    spit(dir / name, text);
    manifest += std::string("file.") + name + "=" + name + "\n";
    manifest += std::string("hash.") + name + "=" + hex64(fnv1a64(text)) + "\n";
  }
  std::string phi;
  for (const auto& [s, t] : c.mapping) phi += s + "\t" + t + "\n";
  spit(dir / "phi.tsv", phi);
  std::string seeds;
  for (std::size_t i = 0; i < c.tgt_seeds.size(); ++i) {
    seeds += "tgt\t" + std::to_string(i) + "\t" + std::to_string(c.tgt_seeds[i]) + "\n";
  }
  spit(dir / "seeds.tsv", seeds);
  manifest += "phi_table=phi.tsv\nhash.phi.tsv=" + hex64(fnv1a64(phi)) + "\n";
  manifest += "seeds_file=seeds.tsv\nhash.seeds.tsv=" + hex64(fnv1a64(seeds)) + "\n";
  spit(dir / "manifest.txt", manifest);
}

BilingualCorpora read_bilingual(const std::filesystem::path& dir, const LabelSet& label_set) {
  BilingualCorpora c;
  c.d_src = read_conll_file(dir / "src.conll", label_set, "src");
  c.d_tgt = read_conll_file(dir / "tgt.conll", label_set, "tgt");
  c.d_unlabeled = read_conll_file(dir / "unlabeled.conll", label_set, "tgt");
  c.d_test = read_conll_file(dir / "test.conll", label_set, "tgt");
  if (std::filesystem::exists(dir / "dev.conll")) {
    c.d_dev = read_conll_file(dir / "dev.conll", label_set, "src");
  } else {
    c.d_dev = Corpus{{}, label_set, "src"};
  }
  if (std::filesystem::exists(dir / "phi.tsv")) {
    std::istringstream in(slurp(dir / "phi.tsv"));
    std::string line;
    while (std::getline(in, line)) {
      const auto tab = line.find('\t');
      if (tab == std::string::npos) continue;
      c.mapping[line.substr(0, tab)] = line.substr(tab + 1);
    }
  }
  if (std::filesystem::exists(dir / "seeds.tsv")) {
    std::istringstream in(slurp(dir / "seeds.tsv"));
    std::string corpus;
    std::size_t index = 0;
    std::uint64_t seed = 0;
    while (in >> corpus >> index >> seed) {
      if (corpus == "tgt") c.tgt_seeds.push_back(seed);
    }
  }
  return c;
}

}  // namespace concner
