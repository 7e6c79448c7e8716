#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "concner/corpus.hpp"

namespace concner {

struct Score {
  std::size_t true_positives = 0;
  std::size_t predicted = 0;
  std::size_t gold = 0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// P = TP/pred (0 if pred = 0), R = TP/gold (0 if gold = 0), F1 = 0 if P + R = 0.
Score make_score(std::size_t tp, std::size_t predicted, std::size_t gold);

struct F1Report {
  std::vector<std::string> types;
  std::vector<Score> per_type;  // aligned with types
  Score micro;
};

// Exact (type, start, end) span matching. Predictions are IOB2-repaired
// before scoring. Throws LengthMismatch naming the sentence.
F1Report entity_f1(const Corpus& gold, const std::vector<std::vector<LabelId>>& predicted);

// Fraction of token positions with equal labels. Throws LengthMismatch.
double label_agreement(const std::vector<std::vector<LabelId>>& a,
                       const std::vector<std::vector<LabelId>>& b);

// Aligned table, one row per type plus "micro".
std::string format_report_text(const F1Report& report);

// "<row>.<field>=<value>" lines; doubles with 17 significant digits.
std::string format_report_kv(const F1Report& report);

}  // namespace concner
