#include "concner/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "concner/config.hpp"
#include "concner/error.hpp"
#include "concner/rng.hpp"

namespace concner {

namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + p.string());
}

std::string exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// First column of every CoNLL line; any label column is ignored.
Corpus read_tokens_only(const fs::path& path, const LabelSet& ls) {
  Corpus c{{}, ls, "tgt"};
  std::istringstream in(slurp(path));
  std::string line;
  LabeledSentence current;
  auto flush = [&] {
    if (current.size() > 0) c.sentences.push_back(std::move(current));
    current = {};
  };
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto end = line.find_first_of("\t ");
    const std::string token = line.substr(0, end);
    if (token.empty()) {
      flush();
      continue;
    }
    current.tokens.push_back(token);
    current.labels.push_back(ls.outside());
  }
  flush();
  return c;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

fs::path require_dir(const fs::path& dir) {
  fs::create_directories(dir);
  return dir;
}

}  // namespace

std::string file_hash(const fs::path& path) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(slurp(path))));
  return buf;
}

void RunManifest::add(const std::string& key, const std::string& value) {
  entries.emplace_back(key, value);
}

void RunManifest::add_file(const std::string& role, const fs::path& path) {
  add(role, path.string());
  add(role + ".hash", file_hash(path));
}

std::string RunManifest::text() const {
  std::string out = "command=" + command + "\ntool_version=" + kToolVersion + "\n";
  out += "# resolved config\n" + config_echo;
  out += "# inputs, outputs and results\n";
  for (const auto& [k, v] : entries) out += k + "=" + v + "\n";
  return out;
}

LabelSet corpus_label_set(const fs::path& corpus_dir) {
  const fs::path manifest = corpus_dir / "manifest.txt";
  if (!fs::exists(manifest)) return LabelSet();
  const KeyValues kv = parse_key_values(slurp(manifest));
  auto it = kv.find("entity_types");
  if (it == kv.end()) return LabelSet();
  return LabelSet::from_types(split_list(it->second));
}

void cmd_gen(const GenConfig& config, const fs::path& out_dir) {
  const BilingualCorpora corpora = generate(config);
  write_bilingual(require_dir(out_dir), corpora, config);
}

TrainSummary cmd_train(const TrainConfig& config, const fs::path& corpus_dir,
                       const fs::path& out_dir) {
  const LabelSet ls = corpus_label_set(corpus_dir);
  const BilingualCorpora corpora = read_bilingual(corpus_dir, ls);
  if (corpora.d_dev.sentences.empty()) {
    throw Error(ErrorCode::IoError, "no dev.conll in " + corpus_dir.string());
  }
  const TeacherResult r = train_teacher(config, corpora, corpora.d_dev);

  require_dir(out_dir);
  save_checkpoint(out_dir / "teacher.ckpt", r.best);
  spit(out_dir / "train.log", format_log(r.log, false));

  RunManifest m{"train", format_train_config(config), {}};
  for (const char* f : {"src.conll", "tgt.conll", "unlabeled.conll", "dev.conll"}) {
    m.add_file(std::string("input.") + f, corpus_dir / f);
  }
  m.add_file("output.checkpoint", out_dir / "teacher.ckpt");
  m.add_file("output.log", out_dir / "train.log");
  m.add("steps", std::to_string(r.steps));
  m.add("best_step", std::to_string(r.best.step));
  m.add("best_dev_f1", exact(r.best.dev_f1));
  spit(out_dir / "manifest.txt", m.text());
  return {r.steps, r.best.step, r.best.dev_f1};
}

DistillSummary cmd_distill(const TrainConfig& config, const fs::path& teacher_path,
                           const fs::path& unlabeled_path, const fs::path& out_dir) {
  DistillSummary s;
  s.teacher_hash_before = file_hash(teacher_path);
  const Checkpoint teacher = load_checkpoint(teacher_path);
  const Corpus unlabeled = read_tokens_only(unlabeled_path, teacher.label_set);
  const StudentResult r = distill_student(teacher, unlabeled, config);

  require_dir(out_dir);
  save_checkpoint(out_dir / "student.ckpt", r.student);
  save_checkpoint(out_dir / "student_init.ckpt",
                  Checkpoint{r.init, teacher.label_set, teacher.vocab, 0, 0.0});
  spit(out_dir / "distill.log", format_log(r.log, true));
  s.steps = r.steps;
  s.agreement = label_agreement(argmax_corpus(teacher.params, teacher.vocab, unlabeled),
                                argmax_corpus(r.student.params, teacher.vocab, unlabeled));
  s.teacher_hash_after = file_hash(teacher_path);
  if (s.teacher_hash_after != s.teacher_hash_before) {
    throw Error(ErrorCode::IoError, "teacher checkpoint changed during distillation");
  }

  RunManifest m{"distill", format_train_config(config), {}};
  m.add("input.teacher", teacher_path.string());
  m.add("input.teacher.hash_before", s.teacher_hash_before);
  m.add("input.teacher.hash_after", s.teacher_hash_after);
  m.add_file("input.unlabeled", unlabeled_path);
  m.add_file("output.checkpoint", out_dir / "student.ckpt");
  m.add_file("output.init_checkpoint", out_dir / "student_init.ckpt");
  m.add_file("output.log", out_dir / "distill.log");
  m.add("steps", std::to_string(r.steps));
  m.add("agreement", exact(s.agreement));
  spit(out_dir / "manifest.txt", m.text());
  return s;
}

F1Report cmd_eval(const fs::path& checkpoint_path, const fs::path& corpus_path,
                  const LabelSet& labels, const std::optional<fs::path>& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  if (!(ckpt.label_set == labels)) {
    throw Error(ErrorCode::LabelSetMismatch, "checkpoint labels {" + ckpt.label_set.describe() +
                                                 "} differ from corpus labels {" +
                                                 labels.describe() + "}");
  }
  const Corpus gold = read_conll_file(corpus_path, labels);
  const F1Report report = entity_f1(gold, predict_corpus(ckpt, gold));
  if (out_dir) {
    require_dir(*out_dir);
    spit(*out_dir / "report.txt", format_report_text(report));
    spit(*out_dir / "report.kv", format_report_kv(report));
    RunManifest m{"eval", "", {}};
    m.add_file("input.checkpoint", checkpoint_path);
    m.add_file("input.corpus", corpus_path);
    m.add_file("output.report", *out_dir / "report.kv");
    spit(*out_dir / "manifest.txt", m.text());
  }
  return report;
}

std::string cmd_predict(const fs::path& checkpoint_path, const fs::path& input_path) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  std::istringstream in(slurp(input_path));
  std::string line, out;
  while (std::getline(in, line)) {
    std::istringstream words(line);
    std::vector<std::string> tokens;
    for (std::string w; words >> w;) tokens.push_back(w);
    if (tokens.empty()) continue;
    const auto labels = predict(ckpt.params, ckpt.vocab.encode(tokens), ckpt.label_set);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      out += tokens[i] + "\t" + ckpt.label_set.name(labels[i]) + "\n";
    }
    out += "\n";
  }
  return out;
}

// ------------------------------------------------------------ experiment

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::En: return "En";
    case Variant::Trans: return "Trans";
    case Variant::EnTrans: return "En+Trans";
    case Variant::PlusLcl: return "+LCL";
    case Variant::PlusTcl: return "+TCL";
    case Variant::PlusBoth: return "+LCL+TCL";
    case Variant::PlusKd: return "+KD";
  }
  return "?";
}

std::vector<Variant> all_variants() {
  return {Variant::En,      Variant::Trans,   Variant::EnTrans, Variant::PlusLcl,
          Variant::PlusTcl, Variant::PlusBoth, Variant::PlusKd};
}

TrainConfig variant_config(const TrainConfig& base, Variant v) {
  TrainConfig c = base;
  c.use_src = v != Variant::Trans;
  c.use_tgt = v != Variant::En;
  c.use_lcl = v == Variant::PlusLcl || v == Variant::PlusBoth || v == Variant::PlusKd;
  c.use_tcl = v == Variant::PlusTcl || v == Variant::PlusBoth || v == Variant::PlusKd;
  c.use_kd = v == Variant::PlusKd;
  return c;
}

double ExperimentRow::mean() const {
  double s = 0.0;
  for (double f : test_f1) s += f;
  return test_f1.empty() ? 0.0 : s / static_cast<double>(test_f1.size());
}

ExperimentResult run_experiment(const TrainConfig& base, const BilingualCorpora& corpora,
                                const std::vector<std::uint64_t>& seeds,
                                const std::vector<Variant>& variants, std::ostream* progress) {
  ExperimentResult result;
  result.seeds = seeds;
  for (auto v : variants) result.rows.push_back({v, {}});
  const Vocabulary vocab = training_vocabulary(corpora);
  auto test_f1 = [&](const Checkpoint& c) {
    return entity_f1(corpora.d_test, predict_corpus(c, corpora.d_test)).micro.f1;
  };
  for (auto seed : seeds) {
    std::optional<Checkpoint> full_teacher;
    auto teacher_for = [&](Variant v) {
      TrainConfig c = variant_config(base, v);
      c.seed = seed;
      return train_teacher(c, corpora, corpora.d_dev, vocab).best;
    };
    for (auto& row : result.rows) {
      double f1 = 0.0;
      if (row.variant == Variant::PlusKd) {
        if (!full_teacher) full_teacher = teacher_for(Variant::PlusBoth);
        TrainConfig c = variant_config(base, Variant::PlusKd);
        c.seed = seed;
        const StudentResult s = distill_student(*full_teacher, corpora.d_unlabeled, c);
        f1 = test_f1(s.student);
        result.kd_agreement.push_back(
            label_agreement(argmax_corpus(full_teacher->params, vocab, corpora.d_unlabeled),
                            argmax_corpus(s.student.params, vocab, corpora.d_unlabeled)));
      } else {
        const Checkpoint best = teacher_for(row.variant);
        if (row.variant == Variant::PlusBoth) full_teacher = best;
        f1 = test_f1(best);
      }
      row.test_f1.push_back(f1);
      if (progress) {
        *progress << "seed " << seed << "\t" << variant_name(row.variant) << "\t" << exact(f1)
                  << std::endl;
      }
    }
  }
  return result;
}

std::string format_experiment(const ExperimentResult& r) {
  std::string out = "variant";
  for (auto s : r.seeds) out += "\tseed" + std::to_string(s);
  out += "\tmean\n";
  char buf[32];
  for (const auto& row : r.rows) {
    out += variant_name(row.variant);
    for (double f : row.test_f1) {
      std::snprintf(buf, sizeof buf, "\t%.4f", f);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, "\t%.4f\n", row.mean());
    out += buf;
  }
  return out;
}

// ------------------------------------------------------------ entry point

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--seed", c.seed, "seed (overrides the config file)");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (out_required) out->required();
}

TrainConfig resolve_train(const Common& c) {
  TrainConfig t = c.config.empty() ? TrainConfig{} : train_config_from(read_key_values(c.config));
  if (c.seed) t.seed = *c.seed;
  return t;
}

GenConfig resolve_gen(const std::string& path, std::optional<std::uint64_t> seed) {
  GenConfig g = path.empty() ? GenConfig{} : gen_config_from(read_key_values(path));
  if (seed) g.seed = *seed;
  return g;
}

}  // namespace

int run_cli(int argc, char** argv) {
  CLI::App app{"Dual-contrastive cross-lingual NER trainer on synthetic bilingual corpora"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  Common gen_c;
  auto* gen = app.add_subcommand("gen", "generate synthetic bilingual corpora");
  add_common(gen, gen_c, true);

  Common train_c;
  std::string train_corpus;
  bool no_lcl = false, no_tcl = false, no_src = false, no_tgt = false;
  auto* train = app.add_subcommand("train", "train the contrastive teacher");
  add_common(train, train_c, true);
  train->add_option("--corpus", train_corpus, "directory written by gen")->required();
  train->add_flag("--no-lcl", no_lcl, "disable label contrast");
  train->add_flag("--no-tcl", no_tcl, "disable translation contrast");
  train->add_flag("--no-src", no_src, "do not train on source sentences");
  train->add_flag("--no-tgt", no_tgt, "do not train on translated sentences");

  Common distill_c;
  std::string teacher_path, unlabeled_path;
  std::optional<std::size_t> kd_steps;
  auto* distill = app.add_subcommand("distill", "distill a student from a teacher checkpoint");
  add_common(distill, distill_c, true);
  distill->add_option("--teacher", teacher_path, "teacher checkpoint")->required();
  distill->add_option("--unlabeled", unlabeled_path, "unlabeled CoNLL or token file")->required();
  distill->add_option("--kd-steps", kd_steps, "cap on distillation steps");

  std::string eval_ckpt, eval_corpus, eval_labels, eval_out;
  auto* eval = app.add_subcommand("eval", "entity-level F1 of a checkpoint on a gold corpus");
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--corpus", eval_corpus, "gold CoNLL file")->required();
  eval->add_option("--labels", eval_labels, "comma-separated label set of the corpus");
  eval->add_option("--out", eval_out, "directory for report files");

  std::string pred_ckpt, pred_input, pred_out;
  auto* pred = app.add_subcommand("predict", "label raw token sequences");
  pred->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  pred->add_option("--input", pred_input, "one sentence per line")->required();
  pred->add_option("--out", pred_out, "output CoNLL file (stdout if absent)");

  Common exp_c;
  std::string exp_gen_config, exp_corpus;
  std::size_t exp_seeds = 5;
  std::string exp_variants;
  auto* exp = app.add_subcommand("experiment", "run the variant grid over several seeds");
  add_common(exp, exp_c, true);
  exp->add_option("--gen-config", exp_gen_config, "generator config (when --corpus is absent)");
  exp->add_option("--corpus", exp_corpus, "directory written by gen");
  exp->add_option("--seeds", exp_seeds, "number of consecutive training seeds");
  exp->add_option("--variants", exp_variants, "comma-separated subset of the variant grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*gen) {
      cmd_gen(resolve_gen(gen_c.config, gen_c.seed), gen_c.out);
      std::cout << "wrote corpora to " << gen_c.out << "\n";
    } else if (*train) {
      TrainConfig c = resolve_train(train_c);
      if (no_lcl) c.use_lcl = false;
      if (no_tcl) c.use_tcl = false;
      if (no_src) c.use_src = false;
      if (no_tgt) c.use_tgt = false;
      // Translation contrast needs both halves of a pair.
      if ((no_src || no_tgt) && !no_tcl) c.use_tcl = false;
      const TrainSummary s = cmd_train(c, train_corpus, train_c.out);
      std::cout << "steps=" << s.steps << " best_step=" << s.best_step
                << " best_dev_f1=" << exact(s.best_dev_f1) << "\n";
    } else if (*distill) {
      TrainConfig c = resolve_train(distill_c);
      if (kd_steps) c.kd_steps = *kd_steps;
      const DistillSummary s = cmd_distill(c, teacher_path, unlabeled_path, distill_c.out);
      std::cout << "steps=" << s.steps << " agreement=" << exact(s.agreement) << "\n";
    } else if (*eval) {
      const LabelSet labels =
          !eval_labels.empty()
              ? LabelSet::from_labels(split_list(eval_labels))
              : corpus_label_set(fs::path(eval_corpus).parent_path());
      const auto out = eval_out.empty() ? std::nullopt : std::optional<fs::path>(eval_out);
      std::cout << format_report_text(cmd_eval(eval_ckpt, eval_corpus, labels, out));
    } else if (*pred) {
      const std::string text = cmd_predict(pred_ckpt, pred_input);
      if (pred_out.empty()) {
        std::cout << text;
      } else {
        spit(pred_out, text);
      }
    } else if (*exp) {
      const TrainConfig base = resolve_train(exp_c);
      fs::path corpus_dir = exp_corpus;
      if (exp_corpus.empty()) {
        corpus_dir = fs::path(exp_c.out) / "corpus";
        cmd_gen(resolve_gen(exp_gen_config, std::nullopt), corpus_dir);
      }
      const BilingualCorpora corpora = read_bilingual(corpus_dir, corpus_label_set(corpus_dir));
      std::vector<std::uint64_t> seeds;
      for (std::size_t i = 0; i < exp_seeds; ++i) seeds.push_back(base.seed + i);
      std::vector<Variant> variants;
      for (const auto& name : split_list(exp_variants)) {
        const auto all = all_variants();
        auto it = std::find_if(all.begin(), all.end(),
                               [&](Variant v) { return variant_name(v) == name; });
        if (it == all.end()) throw Error(ErrorCode::ConfigError, "variants: unknown '" + name + "'");
        variants.push_back(*it);
      }
      if (variants.empty()) variants = all_variants();
      const ExperimentResult r = run_experiment(base, corpora, seeds, variants, &std::cerr);
      require_dir(exp_c.out);
      const std::string table = format_experiment(r);
      spit(fs::path(exp_c.out) / "results.tsv", table);
      RunManifest m{"experiment", format_train_config(base), {}};
      for (const char* f : {"src.conll", "tgt.conll", "unlabeled.conll", "test.conll", "dev.conll"}) {
        m.add_file(std::string("input.") + f, corpus_dir / f);
      }
      for (std::size_t i = 0; i < r.kd_agreement.size(); ++i) {
        m.add("kd_agreement.seed" + std::to_string(seeds[i]), exact(r.kd_agreement[i]));
      }
      m.add_file("output.results", fs::path(exp_c.out) / "results.tsv");
      spit(fs::path(exp_c.out) / "manifest.txt", m.text());
      std::cout << table;
    }
  } catch (const Error& e) {
    std::cerr << "error[" << to_string(e.code()) << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[IoError]: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace concner
