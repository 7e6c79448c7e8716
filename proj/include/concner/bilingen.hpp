#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "concner/corpus.hpp"

namespace concner {

struct GenConfig {
  std::size_t vocab_size_per_language = 200;
  double overlap_fraction = 0.3;
  std::vector<std::string> entity_types = {"PER", "LOC", "ORG", "MISC"};
  std::size_t gazetteer_size_per_type = 25;
  std::size_t templates_per_type = 4;
  std::size_t n_train = 500;
  std::size_t n_dev = 100;
  std::size_t n_unlabeled = 500;
  std::size_t n_test = 300;
  std::size_t max_sentence_len = 24;
  std::uint64_t seed = 2023;

  // Throws ConfigError (field name in the message) or InfeasibleConfig.
  void validate() const;
};

// Source surface form -> target surface form. A bijection.
using TokenMapping = std::map<std::string, std::string>;

struct BilingualCorpora {
  Corpus d_src;        // source language, labeled
  Corpus d_tgt;        // translation of d_src, index-aligned
  Corpus d_unlabeled;  // target language; labels are never read by training
  Corpus d_test;       // target language, held out
  Corpus d_dev;        // source language, checkpoint selection
  TokenMapping mapping;
  // Reordering seed used to produce d_tgt[i] from d_src[i].
  std::vector<std::uint64_t> tgt_seeds;
};

// Deterministic in the config: same config, byte-identical corpora.
BilingualCorpora generate(const GenConfig& config);

// Splits s into chunks (whole entity spans and single O tokens), reorders the
// chunks with a seed-determined local permutation and maps each token through
// `mapping`. Labels move with their tokens. Throws TokenNotInMapping.
LabeledSentence translate_sentence(const LabeledSentence& s, const TokenMapping& mapping,
                                   std::uint64_t seed, const LabelSet& label_set);

// The chunk permutation translate_sentence applies for `seed` to n chunks.
std::vector<std::size_t> chunk_permutation(std::size_t n_chunks, std::uint64_t seed);

// Human-readable descriptions of every violated corpus invariant (empty if none).
std::vector<std::string> check_bilingual(const BilingualCorpora& corpora);

// Writes src.conll, tgt.conll, unlabeled.conll, test.conll, dev.conll,
// phi.tsv, seeds.tsv and manifest.txt into dir.
void write_bilingual(const std::filesystem::path& dir, const BilingualCorpora& corpora,
                     const GenConfig& config);

// Reads the CoNLL files (and the mapping/seeds if present) written above.
BilingualCorpora read_bilingual(const std::filesystem::path& dir, const LabelSet& label_set);

}  // namespace concner
