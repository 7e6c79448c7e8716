#include "concner/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "concner/error.hpp"
#include "concner/eval.hpp"
#include "concner/rng.hpp"

namespace concner {

namespace {

constexpr std::size_t kInferenceBatch = 64;

BilingualBatch assemble(const std::vector<const LabeledSentence*>& sents, const Vocabulary& vocab,
                        bool paired) {
  BilingualBatch b;
  std::vector<std::vector<TokenId>> ids;
  b.offsets.push_back(0);
  for (const auto* s : sents) {
    ids.push_back(vocab.encode(s->tokens));
    b.labels.insert(b.labels.end(), s->labels.begin(), s->labels.end());
    b.offsets.push_back(b.offsets.back() + s->size());
  }
  b.inputs = PaddedBatch::from_sentences(ids);
  b.tokens = b.offsets.back();
  if (paired) {
    const std::size_t n = sents.size() / 2;
    b.partner.resize(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      b.partner[i] = i + n;
      b.partner[i + n] = i;
    }
  }
  return b;
}

void check_index(std::size_t i, const Corpus& c, const char* what) {
  if (i >= c.size()) {
    throw Error(ErrorCode::IndexOutOfRange, std::string(what) + ": sentence index " +
                                                std::to_string(i) + " of " +
                                                std::to_string(c.size()));
  }
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? exact(*v) : "-"; }

std::string dump_batch(const BilingualBatch& b, const Vocabulary& vocab, std::size_t step,
                       const LossBreakdown& l) {
  std::string out = "non-finite loss at step " + std::to_string(step) + " (l_ce=" +
                    exact(l.l_ce) + ", l_lcl=" + opt(l.l_lcl) + ", l_tcl=" + opt(l.l_tcl) +
                    ", l_total=" + exact(l.l_total) + "); batch:";
  for (std::size_t s = 0; s < b.sentences(); ++s) {
    out += "\n  [" + std::to_string(s) + "]";
    for (std::size_t i = 0; i < b.inputs.width; ++i) {
      const std::size_t k = s * b.inputs.width + i;
      if (b.inputs.mask[k]) out += " " + vocab.token(b.inputs.ids[k]);
    }
  }
  return out;
}

std::vector<std::vector<TokenId>> encode_corpus(const Vocabulary& vocab, const Corpus& corpus) {
  std::vector<std::vector<TokenId>> ids;
  ids.reserve(corpus.size());
  for (const auto& s : corpus.sentences) ids.push_back(vocab.encode(s.tokens));
  return ids;
}

std::vector<Tensor> probabilities(const ModelParams& params,
                                  const std::vector<std::vector<TokenId>>& ids) {
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (std::size_t start = 0; start < ids.size(); start += kInferenceBatch) {
    const std::size_t end = std::min(ids.size(), start + kInferenceBatch);
    std::vector<std::vector<TokenId>> chunk(ids.begin() + static_cast<std::ptrdiff_t>(start),
                                            ids.begin() + static_cast<std::ptrdiff_t>(end));
    const HiddenStates h = encode(params, PaddedBatch::from_sentences(chunk));
    const Tensor probs = classify_rows(params, h.hidden);
    const std::size_t y = probs.cols();
    for (std::size_t s = 0; s + 1 < h.offsets.size(); ++s) {
      const auto first = probs.values().begin() + static_cast<std::ptrdiff_t>(h.offsets[s] * y);
      const auto last = probs.values().begin() + static_cast<std::ptrdiff_t>(h.offsets[s + 1] * y);
      out.emplace_back(Shape{h.offsets[s + 1] - h.offsets[s], y}, std::vector<double>(first, last));
    }
  }
  return out;
}

std::vector<std::vector<LabelId>> repaired_predictions(const ModelParams& params,
                                                       const Vocabulary& vocab,
                                                       const LabelSet& ls, const Corpus& corpus) {
  std::vector<std::vector<LabelId>> out;
  for (const auto& p : probabilities(params, encode_corpus(vocab, corpus))) {
    out.push_back(repair_iob2(argmax_rows(p), ls));
  }
  return out;
}

void check_label_set(const LabelSet& expected, const LabelSet& got, const char* what) {
  if (!(expected == got)) {
    throw Error(ErrorCode::LabelSetMismatch, std::string(what) + ": label set {" + got.describe() +
                                                 "} differs from {" + expected.describe() + "}");
  }
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const char* field, const char* why) {
    throw Error(ErrorCode::ConfigError, std::string(field) + ": " + why);
  };
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (eval_every < 1) fail("eval_every", "must be >= 1");
  if (!use_src && !use_tgt) fail("use_src", "at least one of use_src and use_tgt must be set");
  if (use_tcl && !(use_src && use_tgt)) {
    fail("use_tcl", "translation contrast needs both use_src and use_tgt");
  }
  weights.validate();
  optimizer.validate();
  EncoderConfig probe = encoder;
  probe.vocab_size = std::max<std::size_t>(probe.vocab_size, 2);
  probe.label_count = std::max<std::size_t>(probe.label_count, 1);
  probe.validate();
}

BilingualBatch build_bilingual_batch(const Corpus& d_src, const Corpus& d_tgt,
                                     std::span<const std::size_t> indices,
                                     const Vocabulary& vocab) {
  if (d_src.size() != d_tgt.size()) {
    throw Error(ErrorCode::MisalignedCorpora, "build_bilingual_batch: " +
                                                  std::to_string(d_src.size()) +
                                                  " source vs " + std::to_string(d_tgt.size()) +
                                                  " translated sentences");
  }
  std::vector<const LabeledSentence*> sents;
  for (auto i : indices) {
    check_index(i, d_src, "build_bilingual_batch");
    sents.push_back(&d_src.sentences[i]);
  }
  for (auto i : indices) {
    if (d_tgt.sentences[i].size() != d_src.sentences[i].size()) {
      throw Error(ErrorCode::MisalignedCorpora,
                  "build_bilingual_batch: sentence " + std::to_string(i) +
                      " and its translation differ in length");
    }
    sents.push_back(&d_tgt.sentences[i]);
  }
  return assemble(sents, vocab, true);
}

BilingualBatch build_monolingual_batch(const Corpus& corpus, std::span<const std::size_t> indices,
                                       const Vocabulary& vocab) {
  std::vector<const LabeledSentence*> sents;
  for (auto i : indices) {
    check_index(i, corpus, "build_monolingual_batch");
    sents.push_back(&corpus.sentences[i]);
  }
  return assemble(sents, vocab, false);
}

std::string format_log(const std::vector<LogEntry>& log, bool distillation) {
  std::string out = distillation ? "# step\tl_ce\tl_lcl\tl_tcl\tl_total\tl_kd\n"
                                 : "# step\tl_ce\tl_lcl\tl_tcl\tl_total\n";
  for (const auto& e : log) {
    if (e.kind == LogEntry::Kind::Dev) {
      out += "dev\t" + std::to_string(e.step) + "\t" + exact(e.dev_f1) + "\n";
      continue;
    }
    const LossBreakdown& l = e.losses;
    out += std::to_string(e.step);
    out += "\t" + (distillation ? std::string("-") : exact(l.l_ce));
    out += "\t" + opt(l.l_lcl) + "\t" + opt(l.l_tcl) + "\t" + exact(l.l_total);
    if (distillation) out += "\t" + opt(l.l_kd);
    out += "\n";
  }
  return out;
}

Vocabulary training_vocabulary(const BilingualCorpora& corpora) {
  return build_vocabulary({&corpora.d_src, &corpora.d_tgt, &corpora.d_unlabeled}, 1);
}

TeacherResult train_teacher(const TrainConfig& config, const BilingualCorpora& corpora,
                            const Corpus& dev) {
  return train_teacher(config, corpora, dev, training_vocabulary(corpora));
}

TeacherResult train_teacher(const TrainConfig& config, const BilingualCorpora& corpora,
                            const Corpus& dev, const Vocabulary& vocab) {
  config.validate();
  const LabelSet& ls = corpora.d_src.label_set;
  check_label_set(ls, corpora.d_tgt.label_set, "train_teacher: d_tgt");
  check_label_set(ls, dev.label_set, "train_teacher: dev");
  if (config.use_src && config.use_tgt && corpora.d_src.size() != corpora.d_tgt.size()) {
    throw Error(ErrorCode::MisalignedCorpora, "train_teacher: d_src and d_tgt differ in size");
  }
  const Corpus& primary = config.use_src ? corpora.d_src : corpora.d_tgt;
  const std::size_t n = primary.size();
  const std::size_t N = config.batch_size;
  if (n < N) {
    throw Error(ErrorCode::ConfigError, "batch_size: " + std::to_string(N) + " exceeds the " +
                                            std::to_string(n) + " training sentences");
  }

  EncoderConfig ec = config.encoder;
  ec.vocab_size = vocab.size();
  ec.label_count = ls.size();
  ec.init_seed = derive_seed(config.seed, "teacher-init");
  ModelParams params = init_params(ec);

  TeacherResult result;
  result.init = params;
  AdamW optimizer(params, config.optimizer);
  double best_f1 = -1.0;

  auto evaluate = [&](std::size_t step) {
    const double f1 = entity_f1(dev, repaired_predictions(params, vocab, ls, dev)).micro.f1;
    LogEntry e;
    e.kind = LogEntry::Kind::Dev;
    e.step = step;
    e.dev_f1 = f1;
    result.log.push_back(e);
    if (f1 > best_f1) {
      best_f1 = f1;
      result.best = Checkpoint{params, ls, vocab, step, f1};
    }
  };

  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng(config.seed, "teacher-shuffle", epoch).shuffle(order);
    for (std::size_t b = 0; b + N <= n; b += N) {
      std::span<const std::size_t> idx(order.data() + b, N);
      const BilingualBatch batch =
          config.use_src && config.use_tgt
              ? build_bilingual_batch(corpora.d_src, corpora.d_tgt, idx, vocab)
              : build_monolingual_batch(primary, idx, vocab);
      ++step;

      Tape tape;
      BoundModel model(tape, params, true);
      const EncodedBatch enc = encode(model, batch.inputs);
      Var probs = classify(model, enc.hidden);
      Var ce = ce_loss(probs, batch.labels, enc.offsets);
      std::optional<Var> lcl, tcl;
      if (config.use_lcl) {
        if (config.lcl_include_o) {
          lcl = lcl_loss(enc.hidden, batch.labels, config.weights.tau_lcl);
        } else {
          std::vector<std::size_t> rows;
          std::vector<LabelId> kept;
          for (std::size_t r = 0; r < batch.labels.size(); ++r) {
            if (batch.labels[r] != ls.outside()) {
              rows.push_back(r);
              kept.push_back(batch.labels[r]);
            }
          }
          lcl = rows.size() >= 2
                    ? lcl_loss(gather_rows(enc.hidden, rows), kept, config.weights.tau_lcl)
                    : tape.constant(Tensor::scalar(0.0));
        }
      }
      if (config.use_tcl) tcl = tcl_loss(pool_sentences(enc), batch.partner, config.weights.tau_tcl);
      Var total = joint_loss(ce, lcl, tcl, config.weights);

      LogEntry e;
      e.step = step;
      e.losses.l_ce = ce.value().item();
      if (lcl) e.losses.l_lcl = lcl->value().item();
      if (tcl) e.losses.l_tcl = tcl->value().item();
      e.losses.l_total = total.value().item();
      result.log.push_back(e);
      if (!std::isfinite(e.losses.l_total)) {
        throw Error(ErrorCode::NonFiniteLoss, dump_batch(batch, vocab, step, e.losses));
      }

      tape.backward(total);
      std::vector<Tensor> grads;
      grads.reserve(model.vars().size());
      for (const Var& v : model.vars()) grads.push_back(v.grad());
      optimizer.step(params, grads);

      if (step % config.eval_every == 0) evaluate(step);
    }
  }
  if (step == 0 || step % config.eval_every != 0) evaluate(step);
  result.steps = step;
  return result;
}

StudentResult distill_student(const Checkpoint& teacher, const Corpus& d_unlabeled,
                              const TrainConfig& config, const std::optional<ModelParams>& init) {
  config.validate();
  const EncoderConfig& t = teacher.params.config;
  const EncoderConfig& c = config.encoder;
  auto same_arch = [&](const EncoderConfig& a) {
    return a.embed_dim == t.embed_dim && a.num_layers == t.num_layers &&
           a.num_heads == t.num_heads && a.ffn_dim == t.ffn_dim && a.max_len == t.max_len;
  };
  if (!same_arch(c)) {
    throw Error(ErrorCode::ArchitectureMismatch,
                "distill_student: configured encoder (d=" + std::to_string(c.embed_dim) +
                    ", layers=" + std::to_string(c.num_layers) +
                    ", heads=" + std::to_string(c.num_heads) + ", ffn=" +
                    std::to_string(c.ffn_dim) + ", max_len=" + std::to_string(c.max_len) +
                    ") differs from the teacher's (d=" + std::to_string(t.embed_dim) +
                    ", layers=" + std::to_string(t.num_layers) +
                    ", heads=" + std::to_string(t.num_heads) + ", ffn=" +
                    std::to_string(t.ffn_dim) + ", max_len=" + std::to_string(t.max_len) + ")");
  }

  ModelParams student;
  if (init) {
    check_params(*init);
    if (!same_arch(init->config) || init->config.vocab_size != t.vocab_size ||
        init->config.label_count != t.label_count) {
      throw Error(ErrorCode::ArchitectureMismatch,
                  "distill_student: explicit student init does not match the teacher");
    }
    student = *init;
  } else {
    EncoderConfig ec = t;
    ec.init_seed = derive_seed(config.seed, "student-init");
    ec.init_scale = c.init_scale;
    student = init_params(ec);
  }

  StudentResult result;
  result.init = student;
  const auto ids = encode_corpus(teacher.vocab, d_unlabeled);
  // The teacher is frozen, so its distributions are computed once.
  const std::vector<Tensor> soft = probabilities(teacher.params, ids);

  AdamW optimizer(student, config.optimizer);
  const std::size_t n = ids.size();
  const std::size_t N = config.batch_size;
  const std::size_t cap = config.kd_steps.value_or(static_cast<std::size_t>(-1));
  std::size_t step = 0;
  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < config.kd_epochs && step < cap; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    Rng(config.seed, "kd-shuffle", epoch).shuffle(order);
    for (std::size_t b = 0; b < n && step < cap; b += N) {
      const std::size_t end = std::min(n, b + N);
      std::vector<std::vector<TokenId>> batch_ids;
      std::vector<double> target;
      std::size_t rows = 0;
      for (std::size_t k = b; k < end; ++k) {
        batch_ids.push_back(ids[order[k]]);
        const Tensor& p = soft[order[k]];
        target.insert(target.end(), p.values().begin(), p.values().end());
        rows += p.shape()[0];
      }
      ++step;
      Tape tape;
      BoundModel model(tape, student, true);
      const EncodedBatch enc = encode(model, PaddedBatch::from_sentences(batch_ids));
      Var probs = classify(model, enc.hidden);
      Var kd = kd_mse_loss(probs, Tensor({rows, t.label_count}, std::move(target)), enc.offsets);

      LogEntry e;
      e.step = step;
      e.losses.l_kd = kd.value().item();
      e.losses.l_total = *e.losses.l_kd;
      result.log.push_back(e);
      if (!std::isfinite(e.losses.l_total)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "non-finite distillation loss at step " + std::to_string(step));
      }
      tape.backward(kd);
      std::vector<Tensor> grads;
      grads.reserve(model.vars().size());
      for (const Var& v : model.vars()) grads.push_back(v.grad());
      optimizer.step(student, grads);
    }
  }
  result.steps = step;
  result.student = Checkpoint{std::move(student), teacher.label_set, teacher.vocab, step, 0.0};
  return result;
}

std::vector<LabelId> argmax_rows(const Tensor& probs) {
  std::vector<LabelId> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    const auto row = probs.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c)
      if (row[c] > row[best]) best = c;
    out[r] = best;
  }
  return out;
}

std::vector<LabelId> predict(const ModelParams& params, std::span<const TokenId> ids,
                             const LabelSet& label_set) {
  const std::vector<std::vector<TokenId>> one{std::vector<TokenId>(ids.begin(), ids.end())};
  return repair_iob2(argmax_rows(probabilities(params, one).front()), label_set);
}

std::vector<std::vector<LabelId>> predict_corpus(const Checkpoint& ckpt, const Corpus& corpus) {
  return repaired_predictions(ckpt.params, ckpt.vocab, ckpt.label_set, corpus);
}

std::vector<std::vector<LabelId>> argmax_corpus(const ModelParams& params, const Vocabulary& vocab,
                                                const Corpus& corpus) {
  std::vector<std::vector<LabelId>> out;
  for (const auto& p : corpus_probabilities(params, vocab, corpus)) out.push_back(argmax_rows(p));
  return out;
}

std::vector<Tensor> corpus_probabilities(const ModelParams& params, const Vocabulary& vocab,
                                         const Corpus& corpus) {
  return probabilities(params, encode_corpus(vocab, corpus));
}

}  // namespace concner
