#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "concner/autograd.hpp"
#include "concner/corpus.hpp"
#include "concner/tensor.hpp"

namespace concner {

struct LossWeights {
  double alpha = 0.5;
  double beta = 0.25;
  double tau_lcl = 0.1;
  double tau_tcl = 0.1;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Per-step objective values. Absent terms were disabled for the step.
struct LossBreakdown {
  double l_ce = 0.0;
  std::optional<double> l_lcl;
  std::optional<double> l_tcl;
  double l_total = 0.0;
  std::optional<double> l_kd;
};

// Floor applied to gold-label probabilities before taking the log.
inline constexpr double kLogProbFloor = 1e-30;

// Token rows are packed by sentence: sentence s owns rows [offsets[s], offsets[s+1]).
// Mean over each sentence's tokens of -log p(gold), then mean over sentences.
Var ce_loss(Var probs, std::span<const LabelId> gold, std::span<const std::size_t> offsets);

// Supervised token contrast over the M rows of `hidden`. Positives of i are
// the other rows with the same label; the normalizer runs over every k != i.
// Averaged over rows with at least one positive (0 if there are none).
Var lcl_loss(Var hidden, std::span<const LabelId> labels, double tau);

// Sentence contrast: row i's positive is row partner[i]; normalizer over k != i.
// Averaged over all rows. partner must be a fixed-point-free involution.
Var tcl_loss(Var reprs, std::span<const std::size_t> partner, double tau);

// alpha * ce + beta * (lcl + tcl); absent contrastive terms contribute nothing.
Var joint_loss(Var ce, std::optional<Var> lcl, std::optional<Var> tcl, const LossWeights& w);
double joint_loss(double ce, double lcl, double tcl, const LossWeights& w);

// Squared error averaged over labels, then tokens of a sentence, then sentences.
// The teacher side is a constant.
Var kd_mse_loss(Var student_probs, const Tensor& teacher_probs,
                std::span<const std::size_t> offsets);

// Value-level forms of the above.
double ce_loss(const Tensor& probs, std::span<const LabelId> gold,
               std::span<const std::size_t> offsets);
double lcl_loss(const Tensor& hidden, std::span<const LabelId> labels, double tau);
double tcl_loss(const Tensor& reprs, std::span<const std::size_t> partner, double tau);
double kd_mse_loss(const Tensor& student_probs, const Tensor& teacher_probs,
                   std::span<const std::size_t> offsets);

}  // namespace concner
