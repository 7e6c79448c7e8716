#include "concner/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "concner/error.hpp"
#include "concner/rng.hpp"

namespace concner {

namespace {

std::string at_line(std::size_t line) { return "line " + std::to_string(line); }

// Returns the byte offset of the first invalid sequence, or npos.
std::size_t find_invalid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return i;
    }
    if (i + len > s.size()) return i;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return i;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Overlong encodings, surrogates and out-of-range code points.
    if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
        (len == 4 && cp < 0x10000) || cp > 0x10FFFF ||
        (cp >= 0xD800 && cp <= 0xDFFF)) {
      return i;
    }
    i += len;
  }
  return std::string_view::npos;
}

}  // namespace

// ---------------------------------------------------------------- LabelSet

LabelSet::LabelSet() : LabelSet(from_types({"PER", "LOC", "ORG", "MISC"})) {}

LabelSet LabelSet::from_types(const std::vector<std::string>& entity_types) {
  std::vector<std::string> labels;
  for (const auto& t : entity_types) labels.push_back("B-" + t);
  for (const auto& t : entity_types) labels.push_back("I-" + t);
  labels.emplace_back("O");
  return from_labels(labels);
}

LabelSet LabelSet::from_labels(const std::vector<std::string>& labels) {
  LabelSet set{Empty{}};
  set.labels_ = labels;
  set.types_.clear();
  for (const auto& l : labels) {
    if (l == "O") continue;
    if (l.size() < 3 || (l[0] != 'B' && l[0] != 'I') || l[1] != '-') {
      throw Error(ErrorCode::InvalidLabelSet, "label '" + l + "' is neither O nor B-T/I-T");
    }
    const std::string type = l.substr(2);
    if (std::find(set.types_.begin(), set.types_.end(), type) == set.types_.end()) {
      set.types_.push_back(type);
    }
  }
  set.index();
  return set;
}

void LabelSet::index() {
  const std::size_t n_types = types_.size();
  constexpr auto kMissing = static_cast<LabelId>(-1);
  info_.assign(labels_.size(), Info{Tag::Outside, 0});
  begin_.assign(n_types, kMissing);
  inside_.assign(n_types, kMissing);
  std::size_t n_outside = 0;
  for (LabelId id = 0; id < labels_.size(); ++id) {
    const auto& l = labels_[id];
    if (l == "O") {
      outside_ = id;
      ++n_outside;
      continue;
    }
    const auto type = static_cast<std::size_t>(
        std::find(types_.begin(), types_.end(), l.substr(2)) - types_.begin());
    auto& slot = l[0] == 'B' ? begin_[type] : inside_[type];
    if (slot != kMissing) throw Error(ErrorCode::InvalidLabelSet, "duplicate label '" + l + "'");
    slot = id;
    info_[id] = Info{l[0] == 'B' ? Tag::Begin : Tag::Inside, type};
  }
  if (n_outside != 1) {
    throw Error(ErrorCode::InvalidLabelSet, "label set must contain exactly one O label");
  }
  for (std::size_t t = 0; t < n_types; ++t) {
    if (begin_[t] == kMissing || inside_[t] == kMissing) {
      throw Error(ErrorCode::InvalidLabelSet,
                  "entity type '" + types_[t] + "' needs both B- and I- labels");
    }
  }
}

std::optional<LabelId> LabelSet::find(std::string_view label) const {
  for (LabelId id = 0; id < labels_.size(); ++id) {
    if (labels_[id] == label) return id;
  }
  return std::nullopt;
}

std::string LabelSet::describe() const {
  std::string out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (i) out += ',';
    out += labels_[i];
  }
  return out;
}

// ------------------------------------------------------------------ Corpus

std::size_t Corpus::token_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : sentences) n += s.size();
  return n;
}

std::vector<Iob2Violation> validate_iob2(std::span<const LabelId> labels,
                                         const LabelSet& label_set) {
  std::vector<Iob2Violation> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= label_set.size()) {
      throw Error(ErrorCode::IndexOutOfRange,
                  "label index " + std::to_string(labels[i]) + " at position " +
                      std::to_string(i) + " outside label set of size " +
                      std::to_string(label_set.size()));
    }
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (label_set.tag(labels[i]) != Tag::Inside) continue;
    if (i == 0 || label_set.tag(labels[i - 1]) == Tag::Outside) {
      out.push_back({i, Iob2Violation::Reason::InsideWithoutBegin});
    } else if (label_set.type_of(labels[i - 1]) != label_set.type_of(labels[i])) {
      out.push_back({i, Iob2Violation::Reason::TypeMismatch});
    }
  }
  return out;
}

std::vector<LabelId> repair_iob2(std::span<const LabelId> labels, const LabelSet& label_set) {
  std::vector<LabelId> out(labels.begin(), labels.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (label_set.tag(out[i]) != Tag::Inside) continue;
    const std::size_t type = label_set.type_of(out[i]);
    const bool continues = i > 0 && label_set.tag(out[i - 1]) != Tag::Outside &&
                           label_set.type_of(out[i - 1]) == type;
    if (!continues) out[i] = label_set.begin_of(type);
  }
  return out;
}

std::vector<EntitySpan> extract_entities(std::span<const LabelId> labels,
                                         const LabelSet& label_set) {
  const auto repaired = repair_iob2(labels, label_set);
  std::vector<EntitySpan> spans;
  for (std::size_t i = 0; i < repaired.size(); ++i) {
    const Tag tag = label_set.tag(repaired[i]);
    if (tag == Tag::Begin) {
      spans.push_back({label_set.type_of(repaired[i]), i, i + 1});
    } else if (tag == Tag::Inside) {
      spans.back().end = i + 1;
    }
  }
  return spans;
}

void check_corpus(const Corpus& corpus) {
  for (std::size_t s = 0; s < corpus.sentences.size(); ++s) {
    const auto& sent = corpus.sentences[s];
    if (sent.tokens.empty() || sent.tokens.size() != sent.labels.size()) {
      throw Error(ErrorCode::EmptySentence,
                  "sentence " + std::to_string(s) + " is empty or has mismatched labels");
    }
    const auto violations = validate_iob2(sent.labels, corpus.label_set);
    if (!violations.empty()) {
      throw Error(ErrorCode::InvalidIOB2, "sentence " + std::to_string(s) + " position " +
                                              std::to_string(violations.front().position));
    }
  }
}

Corpus parse_conll(std::string_view text, const LabelSet& label_set, std::string language_tag) {
  Corpus corpus{{}, label_set, std::move(language_tag)};
  LabeledSentence current;
  std::size_t line_no = 0;
  std::size_t blank_run = 0;

  auto flush = [&](std::size_t line) {
    const auto violations = validate_iob2(current.labels, label_set);
    if (!violations.empty()) {
      throw Error(ErrorCode::InvalidIOB2,
                  "sentence " + std::to_string(corpus.sentences.size()) + " position " +
                      std::to_string(violations.front().position) + " (ending " + at_line(line) +
                      ")");
    }
    corpus.sentences.push_back(std::move(current));
    current = {};
  };

  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string_view::npos) eol = text.size();
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (auto bad = find_invalid_utf8(line); bad != std::string_view::npos) {
      throw Error(ErrorCode::InvalidUtf8,
                  at_line(line_no) + ": invalid UTF-8 at byte " + std::to_string(bad));
    }

    if (line.empty()) {
      if (!current.tokens.empty()) {
        flush(line_no);
        blank_run = 1;
      } else {
        // Only an error if another token line follows; trailing blanks are fine.
        ++blank_run;
      }
      continue;
    }
    if (current.tokens.empty() && (corpus.sentences.empty() ? blank_run > 0 : blank_run > 1)) {
      throw Error(ErrorCode::EmptySentence,
                  at_line(line_no - 1) + ": empty sentence (consecutive blank lines)");
    }
    blank_run = 0;

    std::string_view token;
    std::string_view label;
    if (auto tab = line.find('\t'); tab != std::string_view::npos) {
      token = line.substr(0, tab);
      label = line.substr(tab + 1);
      if (label.find('\t') != std::string_view::npos) {
        throw Error(ErrorCode::MalformedLine, at_line(line_no) + ": more than two columns");
      }
    } else if (auto sp = line.find(' '); sp != std::string_view::npos) {
      token = line.substr(0, sp);
      label = line.substr(sp + 1);
      if (label.find(' ') != std::string_view::npos) {
        throw Error(ErrorCode::MalformedLine, at_line(line_no) + ": more than two columns");
      }
    } else {
      throw Error(ErrorCode::MalformedLine, at_line(line_no) + ": expected 'token<TAB>label'");
    }
    if (token.empty() || label.empty()) {
      throw Error(ErrorCode::MalformedLine, at_line(line_no) + ": empty token or label");
    }
    auto id = label_set.find(label);
    if (!id) {
      throw Error(ErrorCode::UnknownLabel,
                  at_line(line_no) + ": unknown label '" + std::string(label) + "'");
    }
    current.tokens.emplace_back(token);
    current.labels.push_back(*id);
  }
  if (!current.tokens.empty()) flush(line_no);
  return corpus;
}

std::string serialize_conll(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sentences) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      out += s.tokens[i];
      out += '\t';
      out += corpus.label_set.name(s.labels[i]);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

Corpus read_conll_file(const std::filesystem::path& path, const LabelSet& label_set,
                       std::string language_tag) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_conll(ss.str(), label_set, std::move(language_tag));
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

void write_conll_file(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << serialize_conll(corpus);
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

// -------------------------------------------------------------- Vocabulary

Vocabulary::Vocabulary() {
  add(std::string(kPadToken));
  add(std::string(kUnkToken));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  if (tokens.size() < 2 || tokens[0] != kPadToken || tokens[1] != kUnkToken) {
    throw Error(ErrorCode::BadCheckpoint, "vocabulary must start with <pad>, <unk>");
  }
  Vocabulary v;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (v.contains(tokens[i])) {
      throw Error(ErrorCode::BadCheckpoint, "duplicate vocabulary token '" + tokens[i] + "'");
    }
    v.add(tokens[i]);
  }
  return v;
}

TokenId Vocabulary::add(const std::string& token) {
  auto [it, inserted] = index_.try_emplace(token, tokens_.size());
  if (inserted) tokens_.push_back(token);
  return it->second;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) > 0;
}

std::vector<TokenId> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::uint64_t Vocabulary::hash() const noexcept {
  std::uint64_t h = fnv1a64("");
  for (const auto& t : tokens_) {
    h = fnv1a64(t, h);
    h = fnv1a64(std::string_view("\n", 1), h);
  }
  return h;
}

Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora, std::size_t min_count) {
  if (min_count < 1) throw Error(ErrorCode::ConfigError, "min_count must be >= 1");
  std::map<std::string, std::size_t> counts;
  for (const Corpus* c : corpora) {
    for (const auto& s : c->sentences) {
      for (const auto& t : s.tokens) ++counts[t];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary vocab;
  for (const auto& [token, count] : ranked) {
    if (count < min_count) break;
    if (token == Vocabulary::kPadToken || token == Vocabulary::kUnkToken) continue;
    vocab.add(token);
  }
  return vocab;
}

}  // namespace concner
