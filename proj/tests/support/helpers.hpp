#pragma once

#include <string>
#include <vector>

#include "concner/corpus.hpp"
#include "concner/rng.hpp"
#include "concner/tensor.hpp"
#include "support/oracles.hpp"

namespace testing {

// A random IOB2-valid label sequence of the given length.
inline std::vector<concner::LabelId> random_labels(concner::Rng& rng, const concner::LabelSet& ls,
                                                   std::size_t length) {
  std::vector<concner::LabelId> out;
  const std::size_t n_types = ls.entity_types().size();
  for (std::size_t i = 0; i < length; ++i) {
    const double u = rng.uniform();
    const bool can_continue = !out.empty() && ls.tag(out.back()) != concner::Tag::Outside;
    if (can_continue && u < 0.3) {
      out.push_back(ls.inside_of(ls.type_of(out.back())));
    } else if (u < 0.6) {
      out.push_back(ls.begin_of(rng.below(n_types)));
    } else {
      out.push_back(ls.outside());
    }
  }
  return out;
}

// Any label sequence, valid or not.
inline std::vector<concner::LabelId> arbitrary_labels(concner::Rng& rng,
                                                      const concner::LabelSet& ls,
                                                      std::size_t length) {
  std::vector<concner::LabelId> out;
  for (std::size_t i = 0; i < length; ++i) out.push_back(rng.below(ls.size()));
  return out;
}

inline std::vector<std::string> names(const std::vector<concner::LabelId>& ids,
                                      const concner::LabelSet& ls) {
  std::vector<std::string> out;
  for (auto id : ids) out.push_back(ls.name(id));
  return out;
}

inline concner::Tensor random_tensor(concner::Rng& rng, concner::Shape shape, double lo = -1.0,
                                     double hi = 1.0) {
  concner::Tensor t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Rows that are probability distributions.
inline concner::Tensor random_distributions(concner::Rng& rng, std::size_t rows,
                                            std::size_t cols) {
  concner::Tensor t({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += (t(r, c) = rng.uniform(0.01, 1.0));
    for (std::size_t c = 0; c < cols; ++c) t(r, c) /= s;
  }
  return t;
}

inline oracle::Mat to_mat(const concner::Tensor& t) {
  oracle::Mat m;
  for (std::size_t r = 0; r < t.rows(); ++r) m.emplace_back(t.row(r).begin(), t.row(r).end());
  return m;
}

// Sentence offsets for random lengths summing to `rows`, each >= 1.
inline std::vector<std::size_t> random_offsets(concner::Rng& rng, std::size_t sentences,
                                               std::size_t rows) {
  std::vector<std::size_t> cuts{0};
  std::vector<std::size_t> pool;
  for (std::size_t i = 1; i < rows; ++i) pool.push_back(i);
  rng.shuffle(pool);
  pool.resize(sentences - 1);
  std::sort(pool.begin(), pool.end());
  cuts.insert(cuts.end(), pool.begin(), pool.end());
  cuts.push_back(rows);
  return cuts;
}

}  // namespace testing
