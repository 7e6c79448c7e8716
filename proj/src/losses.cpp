#include "concner/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "concner/error.hpp"

namespace concner {

namespace {

void check_offsets(const char* op, std::span<const std::size_t> offsets, std::size_t rows) {
  if (offsets.size() < 2 || offsets.front() != 0 || offsets.back() != rows) {
    throw Error(ErrorCode::ShapeMismatch,
                std::string(op) + ": sentence offsets do not cover " + std::to_string(rows) +
                    " token rows");
  }
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    if (offsets[s + 1] <= offsets[s]) {
      throw Error(ErrorCode::AllMasked,
                  std::string(op) + ": sentence " + std::to_string(s) + " has no tokens");
    }
  }
}

// Row weight 1 / (sentences * tokens_in_sentence): the two-level average.
std::vector<double> sentence_weights(std::span<const std::size_t> offsets) {
  const double n_sent = static_cast<double>(offsets.size() - 1);
  std::vector<double> w(offsets.back());
  for (std::size_t s = 0; s + 1 < offsets.size(); ++s) {
    const double len = static_cast<double>(offsets[s + 1] - offsets[s]);
    for (std::size_t r = offsets[s]; r < offsets[s + 1]; ++r) w[r] = 1.0 / (n_sent * len);
  }
  return w;
}

std::vector<std::uint8_t> diagonal_mask(std::size_t n) {
  std::vector<std::uint8_t> m(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) m[i * n + i] = 1;
  return m;
}

// -sum(log_softmax(cos(X, X) / tau) * weights), self-similarity excluded.
Var contrast(Var x, const Tensor& weights, double tau) {
  const std::size_t n = x.value().shape()[0];
  Var logits = scale(cosine_similarity_rows(x, x), 1.0 / tau);
  Var log_prob = log_softmax_rows(logits, diagonal_mask(n));
  return scale(sum(mul(log_prob, x.tape().constant(weights))), -1.0);
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) {
    throw Error(ErrorCode::ConfigError, "alpha: must be finite and >= 0");
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw Error(ErrorCode::ConfigError, "beta: must be finite and >= 0");
  }
  if (!(tau_lcl > 0.0)) throw Error(ErrorCode::ConfigError, "tau_lcl: must be > 0");
  if (!(tau_tcl > 0.0)) throw Error(ErrorCode::ConfigError, "tau_tcl: must be > 0");
}

Var ce_loss(Var probs, std::span<const LabelId> gold, std::span<const std::size_t> offsets) {
  const Tensor& P = probs.value();
  if (P.rank() != 2 || P.shape()[0] != gold.size()) {
    throw Error(ErrorCode::LengthMismatch, "ce_loss: " + std::to_string(gold.size()) +
                                               " gold labels for probabilities " +
                                               shape_string(P.shape()));
  }
  check_offsets("ce_loss", offsets, gold.size());
  const std::size_t n_labels = P.shape()[1];
  const auto row_w = sentence_weights(offsets);
  Tensor w(P.shape(), 0.0);
  for (std::size_t r = 0; r < gold.size(); ++r) {
    if (gold[r] >= n_labels) {
      throw Error(ErrorCode::IndexOutOfRange, "ce_loss: gold label " + std::to_string(gold[r]));
    }
    w(r, gold[r]) = row_w[r];
  }
  Var logp = log(probs, kLogProbFloor);
  return scale(sum(mul(logp, probs.tape().constant(std::move(w)))), -1.0);
}

Var lcl_loss(Var hidden, std::span<const LabelId> labels, double tau) {
  const Tensor& H = hidden.value();
  if (H.rank() != 2 || H.shape()[0] != labels.size()) {
    throw Error(ErrorCode::LengthMismatch, "lcl_loss: " + std::to_string(labels.size()) +
                                               " labels for hidden " + shape_string(H.shape()));
  }
  const std::size_t m = labels.size();
  if (m < 2) throw Error(ErrorCode::TooFewTokens, "lcl_loss: needs at least 2 tokens");

  std::vector<std::size_t> positives(m, 0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < m; ++p)
      if (p != i && labels[p] == labels[i]) ++positives[i];
  std::size_t eligible = 0;
  for (auto c : positives) eligible += c > 0 ? 1 : 0;
  if (eligible == 0) return hidden.tape().constant(Tensor::scalar(0.0));

  Tensor w({m, m}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (positives[i] == 0) continue;
    const double wi = 1.0 / (static_cast<double>(positives[i]) * static_cast<double>(eligible));
    for (std::size_t p = 0; p < m; ++p)
      if (p != i && labels[p] == labels[i]) w(i, p) = wi;
  }
  return contrast(hidden, w, tau);
}

Var tcl_loss(Var reprs, std::span<const std::size_t> partner, double tau) {
  const Tensor& R = reprs.value();
  const std::size_t n = partner.size();
  if (R.rank() != 2 || R.shape()[0] != n) {
    throw Error(ErrorCode::InvalidPairing, "tcl_loss: " + std::to_string(n) +
                                               " partners for representations " +
                                               shape_string(R.shape()));
  }
  if (n < 2) throw Error(ErrorCode::InvalidPairing, "tcl_loss: needs at least one pair");
  for (std::size_t i = 0; i < n; ++i) {
    if (partner[i] >= n || partner[i] == i || partner[partner[i]] != i) {
      throw Error(ErrorCode::InvalidPairing,
                  "tcl_loss: partner of " + std::to_string(i) + " is not a perfect matching");
    }
  }
  Tensor w({n, n}, 0.0);
  for (std::size_t i = 0; i < n; ++i) w(i, partner[i]) = 1.0 / static_cast<double>(n);
  return contrast(reprs, w, tau);
}

Var joint_loss(Var ce, std::optional<Var> lcl, std::optional<Var> tcl, const LossWeights& w) {
  Var total = scale(ce, w.alpha);
  std::optional<Var> contrastive;
  if (lcl && tcl) {
    contrastive = add(*lcl, *tcl);
  } else if (lcl) {
    contrastive = lcl;
  } else if (tcl) {
    contrastive = tcl;
  }
  if (contrastive) total = add(total, scale(*contrastive, w.beta));
  return total;
}

double joint_loss(double ce, double lcl, double tcl, const LossWeights& w) {
  return w.alpha * ce + w.beta * (lcl + tcl);
}

Var kd_mse_loss(Var student_probs, const Tensor& teacher_probs,
                std::span<const std::size_t> offsets) {
  const Tensor& S = student_probs.value();
  if (S.rank() != 2 || S.shape() != teacher_probs.shape()) {
    throw Error(ErrorCode::ShapeMismatch, "kd_mse_loss: student " + shape_string(S.shape()) +
                                              " vs teacher " +
                                              shape_string(teacher_probs.shape()));
  }
  check_offsets("kd_mse_loss", offsets, S.shape()[0]);
  const std::size_t n_labels = S.shape()[1];
  const auto row_w = sentence_weights(offsets);
  Tensor w(S.shape());
  for (std::size_t r = 0; r < S.shape()[0]; ++r)
    for (std::size_t c = 0; c < n_labels; ++c) w(r, c) = row_w[r] / static_cast<double>(n_labels);
  Tape& t = student_probs.tape();
  Var diff = sub(student_probs, t.constant(teacher_probs));
  return sum(mul(mul(diff, diff), t.constant(std::move(w))));
}

double ce_loss(const Tensor& probs, std::span<const LabelId> gold,
               std::span<const std::size_t> offsets) {
  Tape t;
  return ce_loss(t.constant(probs), gold, offsets).value().item();
}

double lcl_loss(const Tensor& hidden, std::span<const LabelId> labels, double tau) {
  Tape t;
  return lcl_loss(t.constant(hidden), labels, tau).value().item();
}

double tcl_loss(const Tensor& reprs, std::span<const std::size_t> partner, double tau) {
  Tape t;
  return tcl_loss(t.constant(reprs), partner, tau).value().item();
}

double kd_mse_loss(const Tensor& student_probs, const Tensor& teacher_probs,
                   std::span<const std::size_t> offsets) {
  Tape t;
  return kd_mse_loss(t.constant(student_probs), teacher_probs, offsets).value().item();
}

}  // namespace concner
