#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "concner/bilingen.hpp"
#include "concner/checkpoint.hpp"
#include "concner/corpus.hpp"
#include "concner/encoder.hpp"
#include "concner/losses.hpp"
#include "concner/optim.hpp"

namespace concner {

struct TrainConfig {
  std::size_t batch_size = 16;  // N source sentences; 2N with translations
  std::size_t epochs = 20;
  LossWeights weights;
  AdamWConfig optimizer;
  std::size_t eval_every = 100;
  std::uint64_t seed = 1;

  bool use_lcl = true;
  bool use_tcl = true;
  bool use_kd = true;
  bool use_src = true;
  bool use_tgt = true;
  // When false, O tokens are left out of the label contrast.
  bool lcl_include_o = true;

  std::size_t kd_epochs = 20;
  // Hard cap on distillation steps; unlimited when unset.
  std::optional<std::size_t> kd_steps;

  // Architecture. vocab_size, label_count and init_seed are filled in by training.
  EncoderConfig encoder;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

// Sentences [0, n_pairs) and their partners [n_pairs, 2 n_pairs) when paired;
// a plain list of sentences otherwise (partner empty).
struct BilingualBatch {
  PaddedBatch inputs;
  std::vector<LabelId> labels;        // gold labels of the unmasked tokens, packed
  std::vector<std::size_t> offsets;   // sentence s owns packed rows [offsets[s], offsets[s+1])
  std::vector<std::size_t> partner;   // i <-> i + N
  std::size_t tokens = 0;             // M

  std::size_t sentences() const noexcept { return inputs.batch; }
};

// Throws IndexOutOfRange or MisalignedCorpora.
BilingualBatch build_bilingual_batch(const Corpus& d_src, const Corpus& d_tgt,
                                     std::span<const std::size_t> indices,
                                     const Vocabulary& vocab);

// Unpaired batch drawn from a single corpus.
BilingualBatch build_monolingual_batch(const Corpus& corpus, std::span<const std::size_t> indices,
                                       const Vocabulary& vocab);

// One line of a training log: a step's losses or a dev evaluation.
struct LogEntry {
  enum class Kind { Step, Dev };
  Kind kind = Kind::Step;
  std::size_t step = 0;
  LossBreakdown losses;
  double dev_f1 = 0.0;
};

// "step\tl_ce\tl_lcl\tl_tcl\tl_total[\tl_kd]" with "-" for disabled terms, and
// "dev\t<step>\t<f1>" lines. Doubles are printed with 17 significant digits.
std::string format_log(const std::vector<LogEntry>& log, bool distillation);

// Token vocabulary over the source, translated and unlabeled text.
Vocabulary training_vocabulary(const BilingualCorpora& corpora);

struct TeacherResult {
  Checkpoint best;
  ModelParams init;
  std::vector<LogEntry> log;
  std::size_t steps = 0;
};

// Joint-objective teacher training with dev-F1 checkpoint selection.
// Throws NonFiniteLoss with a dump of the offending batch.
TeacherResult train_teacher(const TrainConfig& config, const BilingualCorpora& corpora,
                            const Corpus& dev);

// Same, with an explicit vocabulary.
TeacherResult train_teacher(const TrainConfig& config, const BilingualCorpora& corpora,
                            const Corpus& dev, const Vocabulary& vocab);

struct StudentResult {
  Checkpoint student;
  ModelParams init;
  std::vector<LogEntry> log;
  std::size_t steps = 0;
};

// Fits a fresh student to the teacher's output distributions on d_unlabeled
// (labels there are never read). `init` replaces the random student init.
// Throws ArchitectureMismatch when config.encoder disagrees with the teacher.
StudentResult distill_student(const Checkpoint& teacher, const Corpus& d_unlabeled,
                              const TrainConfig& config,
                              const std::optional<ModelParams>& init = std::nullopt);

// Lowest index among the maxima of each row.
std::vector<LabelId> argmax_rows(const Tensor& probs);

// Per-token argmax, then IOB2 repair. Throws SentenceTooLong.
std::vector<LabelId> predict(const ModelParams& params, std::span<const TokenId> ids,
                             const LabelSet& label_set);

// Repaired predictions for every sentence of a corpus (OOV -> UNK).
std::vector<std::vector<LabelId>> predict_corpus(const Checkpoint& ckpt, const Corpus& corpus);

// Raw argmax labels (no repair), as used for agreement measurement.
std::vector<std::vector<LabelId>> argmax_corpus(const ModelParams& params, const Vocabulary& vocab,
                                                const Corpus& corpus);

// Label distributions per sentence of a corpus.
std::vector<Tensor> corpus_probabilities(const ModelParams& params, const Vocabulary& vocab,
                                         const Corpus& corpus);

}  // namespace concner
