#include "concner/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <iterator>

#include "concner/error.hpp"

namespace concner {

Score make_score(std::size_t tp, std::size_t predicted, std::size_t gold) {
  Score s{tp, predicted, gold, 0.0, 0.0, 0.0};
  s.precision = predicted == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted);
  s.recall = gold == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(gold);
  const double denom = s.precision + s.recall;
  s.f1 = denom == 0.0 ? 0.0 : 2.0 * s.precision * s.recall / denom;
  return s;
}

F1Report entity_f1(const Corpus& gold, const std::vector<std::vector<LabelId>>& predicted) {
  if (predicted.size() != gold.size()) {
    throw Error(ErrorCode::LengthMismatch, "entity_f1: " + std::to_string(predicted.size()) +
                                               " predicted sentences for " +
                                               std::to_string(gold.size()) + " gold sentences");
  }
  const LabelSet& ls = gold.label_set;
  const std::size_t n_types = ls.entity_types().size();
  std::vector<std::size_t> tp(n_types, 0), pred(n_types, 0), gold_n(n_types, 0);
  for (std::size_t s = 0; s < gold.size(); ++s) {
    const auto& g = gold.sentences[s].labels;
    if (predicted[s].size() != g.size()) {
      throw Error(ErrorCode::LengthMismatch,
                  "entity_f1: sentence " + std::to_string(s) + " has " +
                      std::to_string(predicted[s].size()) + " predicted labels for " +
                      std::to_string(g.size()) + " tokens");
    }
    // Spans come back in position order; set_intersection needs operator< order.
    auto gs = extract_entities(g, ls);
    auto ps = extract_entities(predicted[s], ls);
    std::sort(gs.begin(), gs.end());
    std::sort(ps.begin(), ps.end());
    for (const auto& e : gs) ++gold_n[e.type];
    for (const auto& e : ps) ++pred[e.type];
    std::vector<EntitySpan> both;
    std::set_intersection(gs.begin(), gs.end(), ps.begin(), ps.end(), std::back_inserter(both));
    for (const auto& e : both) ++tp[e.type];
  }
  F1Report r;
  r.types = ls.entity_types();
  std::size_t t_tp = 0, t_pred = 0, t_gold = 0;
  for (std::size_t t = 0; t < n_types; ++t) {
    r.per_type.push_back(make_score(tp[t], pred[t], gold_n[t]));
    t_tp += tp[t];
    t_pred += pred[t];
    t_gold += gold_n[t];
  }
  r.micro = make_score(t_tp, t_pred, t_gold);
  return r;
}

double label_agreement(const std::vector<std::vector<LabelId>>& a,
                       const std::vector<std::vector<LabelId>>& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::LengthMismatch, "label_agreement: " + std::to_string(a.size()) +
                                               " vs " + std::to_string(b.size()) + " sentences");
  }
  std::size_t same = 0, total = 0;
  for (std::size_t s = 0; s < a.size(); ++s) {
    if (a[s].size() != b[s].size()) {
      throw Error(ErrorCode::LengthMismatch,
                  "label_agreement: sentence " + std::to_string(s) + " lengths differ");
    }
    for (std::size_t i = 0; i < a[s].size(); ++i) same += a[s][i] == b[s][i] ? 1 : 0;
    total += a[s].size();
  }
  return total == 0 ? 1.0 : static_cast<double>(same) / static_cast<double>(total);
}

std::string format_report_text(const F1Report& r) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %8s %8s %8s %9s %9s %9s\n", "type", "tp", "pred", "gold",
                "precision", "recall", "f1");
  out += line;
  auto row = [&](const std::string& name, const Score& s) {
    std::snprintf(line, sizeof line, "%-8s %8zu %8zu %8zu %9.4f %9.4f %9.4f\n", name.c_str(),
                  s.true_positives, s.predicted, s.gold, s.precision, s.recall, s.f1);
    out += line;
  };
  for (std::size_t t = 0; t < r.types.size(); ++t) row(r.types[t], r.per_type[t]);
  row("micro", r.micro);
  return out;
}

std::string format_report_kv(const F1Report& r) {
  std::string out;
  char line[200];
  auto row = [&](const std::string& name, const Score& s) {
    std::snprintf(line, sizeof line,
                  "%s.tp=%zu\n%s.pred=%zu\n%s.gold=%zu\n%s.precision=%.17g\n%s.recall=%.17g\n"
                  "%s.f1=%.17g\n",
                  name.c_str(), s.true_positives, name.c_str(), s.predicted, name.c_str(), s.gold,
                  name.c_str(), s.precision, name.c_str(), s.recall, name.c_str(), s.f1);
    out += line;
  };
  for (std::size_t t = 0; t < r.types.size(); ++t) row(r.types[t], r.per_type[t]);
  row("micro", r.micro);
  return out;
}

}  // namespace concner
