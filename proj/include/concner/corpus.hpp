#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace concner {

using LabelId = std::size_t;
using TokenId = std::size_t;

enum class Tag : std::uint8_t { Outside, Begin, Inside };

// Ordered IOB2 label inventory. Index order is declaration order.
class LabelSet {
 public:
  // The nine CoNLL labels: B-PER B-LOC B-ORG B-MISC I-PER I-LOC I-ORG I-MISC O.
  LabelSet();

  // B-* for every type, then I-* for every type, then O.
  static LabelSet from_types(const std::vector<std::string>& entity_types);

  // Validates an explicit label list; entity types are taken in order of
  // first appearance. Throws InvalidLabelSet.
  static LabelSet from_labels(const std::vector<std::string>& labels);

  std::size_t size() const noexcept { return labels_.size(); }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  const std::vector<std::string>& entity_types() const noexcept { return types_; }

  const std::string& name(LabelId id) const { return labels_.at(id); }
  std::optional<LabelId> find(std::string_view label) const;

  LabelId outside() const noexcept { return outside_; }
  Tag tag(LabelId id) const { return info_.at(id).tag; }
  // Entity type index of a B-/I- label. Undefined for O.
  std::size_t type_of(LabelId id) const { return info_.at(id).type; }
  LabelId begin_of(std::size_t type) const { return begin_.at(type); }
  LabelId inside_of(std::size_t type) const { return inside_.at(type); }

  // Comma-joined label names; used in checkpoint manifests and error text.
  std::string describe() const;

  bool operator==(const LabelSet& other) const { return labels_ == other.labels_; }

 private:
  struct Empty {};
  explicit LabelSet(Empty) {}

  struct Info {
    Tag tag;
    std::size_t type;
  };

  void index();

  std::vector<std::string> labels_;
  std::vector<std::string> types_;
  std::vector<Info> info_;
  std::vector<LabelId> begin_;
  std::vector<LabelId> inside_;
  LabelId outside_ = 0;
};

struct LabeledSentence {
  std::vector<std::string> tokens;
  std::vector<LabelId> labels;

  std::size_t size() const noexcept { return tokens.size(); }
  bool operator==(const LabeledSentence&) const = default;
};

struct Corpus {
  std::vector<LabeledSentence> sentences;
  LabelSet label_set;
  std::string language_tag;

  std::size_t size() const noexcept { return sentences.size(); }
  std::size_t token_count() const noexcept;
  bool operator==(const Corpus&) const = default;
};

// Half-open token range [start, end) carrying an entity type index.
struct EntitySpan {
  std::size_t type = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const noexcept { return end - start; }
  auto operator<=>(const EntitySpan&) const = default;
};

struct Iob2Violation {
  enum class Reason { InsideWithoutBegin, TypeMismatch };
  std::size_t position = 0;
  Reason reason = Reason::InsideWithoutBegin;

  bool operator==(const Iob2Violation&) const = default;
};

Corpus parse_conll(std::string_view text, const LabelSet& label_set,
                   std::string language_tag = {});
std::string serialize_conll(const Corpus& corpus);

Corpus read_conll_file(const std::filesystem::path& path, const LabelSet& label_set,
                       std::string language_tag = {});
void write_conll_file(const std::filesystem::path& path, const Corpus& corpus);

// Empty iff the sequence is IOB2-valid. Throws IndexOutOfRange.
std::vector<Iob2Violation> validate_iob2(std::span<const LabelId> labels,
                                         const LabelSet& label_set);

// Rewrites every I-T without a B-T/I-T predecessor to B-T.
std::vector<LabelId> repair_iob2(std::span<const LabelId> labels,
                                 const LabelSet& label_set);

// Spans sorted by start. Invalid input is read as if repaired first.
std::vector<EntitySpan> extract_entities(std::span<const LabelId> labels,
                                         const LabelSet& label_set);

// Throws InvalidIOB2 naming the first offending sentence and position.
void check_corpus(const Corpus& corpus);

class Vocabulary {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  Vocabulary();

  // Rebuilds a vocabulary from its id-ordered token list (e.g. a checkpoint).
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  // Appends a token if absent and returns its id.
  TokenId add(const std::string& token);

  // UNK for out-of-vocabulary tokens.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }

  std::vector<TokenId> encode(const std::vector<std::string>& tokens) const;

  std::uint64_t hash() const noexcept;

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

// Ids assigned by (count desc, token asc) over the union of all corpora.
Vocabulary build_vocabulary(const std::vector<const Corpus*>& corpora,
                            std::size_t min_count);

}  // namespace concner
