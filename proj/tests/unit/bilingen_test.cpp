#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "concner/bilingen.hpp"
#include "concner/error.hpp"
#include "support/helpers.hpp"

using namespace concner;

namespace {

GenConfig small_config() {
  GenConfig c;
  c.n_train = 60;
  c.n_dev = 10;
  c.n_unlabeled = 40;
  c.n_test = 30;
  return c;
}

std::set<std::string> surface(const Corpus& c) {
  std::set<std::string> out;
  for (const auto& s : c.sentences) out.insert(s.tokens.begin(), s.tokens.end());
  return out;
}

std::multiset<std::pair<std::size_t, std::size_t>> shape(const LabeledSentence& s,
                                                         const LabelSet& ls) {
  std::multiset<std::pair<std::size_t, std::size_t>> out;
  for (const auto& e : extract_entities(s.labels, ls)) out.insert({e.type, e.length()});
  return out;
}

std::uint64_t seed_with_permutation(std::size_t n, const std::vector<std::size_t>& want) {
  for (std::uint64_t seed = 0;; ++seed) {
    if (chunk_permutation(n, seed) == want) return seed;
  }
}

}  // namespace

TEST_CASE("default config satisfies every corpus invariant") {
  const BilingualCorpora c = generate(GenConfig{});
  CHECK(c.d_src.size() == 500);
  CHECK(c.d_tgt.size() == 500);
  CHECK(c.d_test.size() == 300);
  CHECK(c.d_unlabeled.size() == 500);
  const auto problems = check_bilingual(c);
  for (const auto& p : problems) INFO(p);
  CHECK(problems.empty());
  for (const auto& s : c.d_src.sentences) CHECK(s.size() <= GenConfig{}.max_sentence_len);
}

TEST_CASE("generation is deterministic and seed-sensitive") {
  const GenConfig cfg = small_config();
  const BilingualCorpora a = generate(cfg), b = generate(cfg);
  CHECK(serialize_conll(a.d_src) == serialize_conll(b.d_src));
  CHECK(serialize_conll(a.d_tgt) == serialize_conll(b.d_tgt));
  CHECK(serialize_conll(a.d_unlabeled) == serialize_conll(b.d_unlabeled));
  CHECK(serialize_conll(a.d_test) == serialize_conll(b.d_test));
  CHECK(a.mapping == b.mapping);
  GenConfig other = cfg;
  other.seed += 1;
  CHECK(serialize_conll(generate(other).d_src) != serialize_conll(a.d_src));
}

TEST_CASE("full overlap: translations differ only by chunk order") {
  GenConfig cfg = small_config();
  cfg.overlap_fraction = 1.0;
  const BilingualCorpora c = generate(cfg);
  for (const auto& [s, t] : c.mapping) CHECK(s == t);
  for (std::size_t i = 0; i < c.d_src.size(); ++i) {
    auto a = c.d_src.sentences[i].tokens, b = c.d_tgt.sentences[i].tokens;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
}

TEST_CASE("zero overlap: no surface token is shared") {
  GenConfig cfg = small_config();
  cfg.overlap_fraction = 0.0;
  const BilingualCorpora c = generate(cfg);
  const auto src = surface(c.d_src), tgt = surface(c.d_tgt);
  std::vector<std::string> shared;
  std::set_intersection(src.begin(), src.end(), tgt.begin(), tgt.end(), std::back_inserter(shared));
  CHECK(shared.empty());
}

TEST_CASE("partial overlap shares roughly the requested fraction of the lexicon") {
  const BilingualCorpora c = generate(GenConfig{});
  std::size_t same = 0;
  for (const auto& [s, t] : c.mapping) same += s == t ? 1 : 0;
  CHECK(c.mapping.size() == 200);
  CHECK(same == 60);
  std::set<std::string> targets;
  for (const auto& [s, t] : c.mapping) targets.insert(t);
  CHECK(targets.size() == c.mapping.size());  // a bijection
}

TEST_CASE("stored seeds replay every translation") {
  const BilingualCorpora c = generate(small_config());
  REQUIRE(c.tgt_seeds.size() == c.d_src.size());
  for (std::size_t i = 0; i < c.d_src.size(); ++i) {
    CHECK(translate_sentence(c.d_src.sentences[i], c.mapping, c.tgt_seeds[i], c.d_src.label_set) ==
          c.d_tgt.sentences[i]);
  }
}

TEST_CASE("test sentences never occur in the target training text") {
  const BilingualCorpora c = generate(small_config());
  std::set<std::vector<std::string>> seen;
  for (const auto& s : c.d_tgt.sentences) seen.insert(s.tokens);
  for (const auto& s : c.d_unlabeled.sentences) seen.insert(s.tokens);
  for (const auto& s : c.d_test.sentences) CHECK(seen.count(s.tokens) == 0);
}

TEST_CASE("translate_sentence examples") {
  const LabelSet ls;
  const LabeledSentence s{{"w0", "w1", "w2"}, {*ls.find("B-PER"), *ls.find("I-PER"), ls.outside()}};
  const TokenMapping identity{{"w0", "w0"}, {"w1", "w1"}, {"w2", "w2"}};
  CHECK(translate_sentence(s, identity, seed_with_permutation(2, {0, 1}), ls) == s);

  const TokenMapping phi{{"w0", "v0"}, {"w1", "v1"}, {"w2", "v2"}};
  const LabeledSentence swapped{{"v2", "v0", "v1"},
                                {ls.outside(), *ls.find("B-PER"), *ls.find("I-PER")}};
  CHECK(translate_sentence(s, phi, seed_with_permutation(2, {1, 0}), ls) == swapped);

  try {
    translate_sentence(s, TokenMapping{{"w0", "v0"}}, 1, ls);
    FAIL("expected TokenNotInMapping");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::TokenNotInMapping);
  }
}

TEST_CASE("translate_sentence preserves entity shapes on random sentences") {
  const LabelSet ls;
  Rng rng(99, "translate");
  TokenMapping phi;
  for (int i = 0; i < 30; ++i) phi["s" + std::to_string(i)] = "t" + std::to_string(i);
  for (int trial = 0; trial < 1000; ++trial) {
    LabeledSentence s;
    s.labels = testing::random_labels(rng, ls, rng.between(1, 15));
    for (std::size_t i = 0; i < s.labels.size(); ++i) s.tokens.push_back("s" + std::to_string(rng.below(30)));
    const LabeledSentence t = translate_sentence(s, phi, rng.next_u64(), ls);
    CHECK(validate_iob2(t.labels, ls).empty());
    CHECK(shape(t, ls) == shape(s, ls));
    CHECK(t.size() == s.size());
  }
}

TEST_CASE("chunk permutations are local permutations") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t n = 1 + seed % 12;
    auto p = chunk_permutation(n, seed);
    for (std::size_t k = 0; k < n; ++k) {
      const auto moved = static_cast<long>(p[k]) - static_cast<long>(k);
      CHECK(std::labs(moved) <= 2);
    }
    std::sort(p.begin(), p.end());
    for (std::size_t k = 0; k < n; ++k) CHECK(p[k] == k);
  }
}

TEST_CASE("config validation") {
  GenConfig c;
  c.overlap_fraction = 1.5;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConfigError);
    CHECK(std::string(e.what()).find("overlap_fraction") != std::string::npos);
  }
  GenConfig big;
  big.gazetteer_size_per_type = 100;
  try {
    generate(big);
    FAIL("expected InfeasibleConfig");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InfeasibleConfig);
  }
  GenConfig few;
  few.n_test = 2;
  CHECK_THROWS_AS(few.validate(), Error);
}

TEST_CASE("write and read back") {
  const GenConfig cfg = small_config();
  const BilingualCorpora c = generate(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "concner_bilingen_test";
  std::filesystem::remove_all(dir);
  write_bilingual(dir, c, cfg);
  for (const char* f : {"src.conll", "tgt.conll", "unlabeled.conll", "test.conll", "dev.conll",
                        "phi.tsv", "seeds.tsv", "manifest.txt"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const BilingualCorpora r = read_bilingual(dir, c.d_src.label_set);
  CHECK(r.d_src == c.d_src);
  CHECK(r.d_tgt == c.d_tgt);
  CHECK(r.d_unlabeled == c.d_unlabeled);
  CHECK(r.d_test == c.d_test);
  CHECK(r.d_dev == c.d_dev);
  CHECK(r.mapping == c.mapping);
  CHECK(r.tgt_seeds == c.tgt_seeds);
  std::filesystem::remove_all(dir);
}
