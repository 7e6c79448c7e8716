#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "concner/bilingen.hpp"
#include "concner/checkpoint.hpp"
#include "concner/eval.hpp"
#include "concner/trainer.hpp"

namespace concner {

inline constexpr const char* kToolVersion = "concner 0.1.0";

// 16 hex digits of FNV-1a over a file's bytes. Throws IoError.
std::string file_hash(const std::filesystem::path& path);

// Key=value record of a run: resolved config, inputs with hashes, outputs
// with hashes, plus command-specific results.
struct RunManifest {
  std::string command;
  std::string config_echo;
  std::vector<std::pair<std::string, std::string>> entries;

  void add(const std::string& key, const std::string& value);
  void add_file(const std::string& role, const std::filesystem::path& path);
  std::string text() const;
};

// The label set a corpus directory was generated with (manifest.txt), or
// the default nine labels when there is no manifest.
LabelSet corpus_label_set(const std::filesystem::path& corpus_dir);

// ---------------------------------------------------------------- commands

void cmd_gen(const GenConfig& config, const std::filesystem::path& out_dir);

struct TrainSummary {
  std::size_t steps = 0;
  std::uint64_t best_step = 0;
  double best_dev_f1 = 0.0;
};
TrainSummary cmd_train(const TrainConfig& config, const std::filesystem::path& corpus_dir,
                       const std::filesystem::path& out_dir);

struct DistillSummary {
  std::size_t steps = 0;
  double agreement = 0.0;
  std::string teacher_hash_before;
  std::string teacher_hash_after;
};
DistillSummary cmd_distill(const TrainConfig& config, const std::filesystem::path& teacher_path,
                           const std::filesystem::path& unlabeled_path,
                           const std::filesystem::path& out_dir);

// Scores a checkpoint on a gold corpus. `labels` is the corpus' label set;
// it must equal the checkpoint's (LabelSetMismatch otherwise).
F1Report cmd_eval(const std::filesystem::path& checkpoint_path,
                  const std::filesystem::path& corpus_path, const LabelSet& labels,
                  const std::optional<std::filesystem::path>& out_dir);

// Input: one sentence per line, whitespace-separated tokens. Output: CoNLL.
std::string cmd_predict(const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& input_path);

// ------------------------------------------------------------ experiment

enum class Variant { En, Trans, EnTrans, PlusLcl, PlusTcl, PlusBoth, PlusKd };

std::string variant_name(Variant v);
std::vector<Variant> all_variants();

// Corpus selection and loss toggles of a variant on top of `base`.
TrainConfig variant_config(const TrainConfig& base, Variant v);

struct ExperimentRow {
  Variant variant;
  std::vector<double> test_f1;  // one per seed
  double mean() const;
};

struct ExperimentResult {
  std::vector<std::uint64_t> seeds;
  std::vector<ExperimentRow> rows;
  // Student/teacher agreement on d_unlabeled per seed (only with PlusKd).
  std::vector<double> kd_agreement;
};

// Trains every variant once per seed on fixed corpora and scores target-test
// micro-F1. PlusKd distills the PlusBoth teacher of the same seed.
ExperimentResult run_experiment(const TrainConfig& base, const BilingualCorpora& corpora,
                                const std::vector<std::uint64_t>& seeds,
                                const std::vector<Variant>& variants, std::ostream* progress);

// Tab-separated: variant, one column per seed, mean.
std::string format_experiment(const ExperimentResult& result);

// Entry point of the command-line tool. Returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace concner
