#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "concner/cli.hpp"
#include "concner/config.hpp"
#include "concner/error.hpp"

using namespace concner;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "concner");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  auto* old_out = std::cout.rdbuf(out.rdbuf());
  auto* old_err = std::cerr.rdbuf(err.rdbuf());
  const int code = run_cli(static_cast<int>(argv.size()), argv.data());
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

// A scratch directory with a small corpus and matching configs.
struct Workspace {
  fs::path root = fs::temp_directory_path() / "concner_cli_test";
  fs::path gen_cfg = root / "gen.cfg", train_cfg = root / "train.cfg", corpus = root / "corpus";

  Workspace() {
    fs::remove_all(root);
    fs::create_directories(root);
    spit(gen_cfg, "n_train=24\nn_dev=8\nn_unlabeled=20\nn_test=8\n");
    spit(train_cfg,
         "# tiny model\nbatch_size=4\nepochs=2\neval_every=5\nembed_dim=8\nnum_layers=1\n"
         "ffn_dim=16\nkd_epochs=1\n");
    REQUIRE(run({"gen", "--config", gen_cfg.string(), "--out", corpus.string()}).code == 0);
  }
  ~Workspace() { fs::remove_all(root); }

  fs::path train(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--config", train_cfg.string(), "--corpus",
                                  corpus.string(), "--out", (root / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const Run r = run(args);
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return root / name;
  }
};

}  // namespace

TEST_CASE("gen is deterministic and reports bad fields by name") {
  Workspace w;
  const fs::path again = w.root / "again";
  REQUIRE(run({"gen", "--config", w.gen_cfg.string(), "--out", again.string()}).code == 0);
  for (const char* f : {"src.conll", "tgt.conll", "unlabeled.conll", "test.conll", "dev.conll",
                        "phi.tsv", "seeds.tsv", "manifest.txt"}) {
    CHECK(slurp(w.corpus / f) == slurp(again / f));
  }

  spit(w.root / "bad.cfg", "overlap_fraction=1.5\n");
  const Run bad = run({"gen", "--config", (w.root / "bad.cfg").string(), "--out",
                       (w.root / "bad").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("error[ConfigError]") == 0);
  CHECK(bad.err.find("overlap_fraction") != std::string::npos);

  spit(w.root / "typo.cfg", "n_trian=3\n");
  const Run typo = run({"gen", "--config", (w.root / "typo.cfg").string(), "--out",
                        (w.root / "bad").string()});
  CHECK(typo.code == 1);
  CHECK(typo.err.find("n_trian") != std::string::npos);
}

TEST_CASE("train writes a checkpoint, a log and a manifest") {
  Workspace w;
  const fs::path dir = w.train("full");
  CHECK(fs::exists(dir / "teacher.ckpt"));
  const KeyValues m = parse_key_values(slurp(dir / "manifest.txt"));
  CHECK(m.at("output.checkpoint.hash") == file_hash(dir / "teacher.ckpt"));

  // The manifest's best dev F1 is the largest dev line of the log.
  std::istringstream log(slurp(dir / "train.log"));
  std::string line;
  double best = -1.0;
  while (std::getline(log, line)) {
    if (line.rfind("dev\t", 0) == 0) best = std::max(best, std::stod(line.substr(line.rfind('\t') + 1)));
  }
  CHECK(std::stod(m.at("best_dev_f1")) == best);

  const fs::path ce = w.train("ce", {"--no-lcl", "--no-tcl"});
  std::istringstream ce_log(slurp(ce / "train.log"));
  std::getline(ce_log, line);
  CHECK(line == "# step\tl_ce\tl_lcl\tl_tcl\tl_total");
  std::size_t steps = 0;
  while (std::getline(ce_log, line)) {
    if (line.rfind("dev\t", 0) == 0) continue;
    std::istringstream fields(line);
    std::string step, l_ce, l_lcl, l_tcl, l_total;
    std::getline(fields, step, '\t');
    std::getline(fields, l_ce, '\t');
    std::getline(fields, l_lcl, '\t');
    std::getline(fields, l_tcl, '\t');
    std::getline(fields, l_total, '\t');
    CHECK(l_lcl == "-");
    CHECK(l_tcl == "-");
    CHECK(std::abs(std::stod(l_total) - 0.5 * std::stod(l_ce)) <= 1e-12);
    ++steps;
  }
  CHECK(steps == 12);

  const Run en = run({"train", "--config", w.train_cfg.string(), "--corpus", w.corpus.string(),
                      "--out", (w.root / "en").string(), "--no-tgt"});
  CHECK(en.code == 0);
  CHECK(slurp(w.root / "en" / "manifest.txt").find("use_tcl=false") != std::string::npos);
}

TEST_CASE("distill leaves the teacher untouched") {
  Workspace w;
  const fs::path teacher = w.train("t") / "teacher.ckpt";
  const std::string before = slurp(teacher);
  const fs::path out = w.root / "s";
  const Run r = run({"distill", "--config", w.train_cfg.string(), "--teacher", teacher.string(),
                     "--unlabeled", (w.corpus / "unlabeled.conll").string(), "--out", out.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(slurp(teacher) == before);
  const KeyValues m = parse_key_values(slurp(out / "manifest.txt"));
  CHECK(m.at("input.teacher.hash_before") == m.at("input.teacher.hash_after"));
  CHECK(r.out.find("steps=5 ") == 0);

  const fs::path zero = w.root / "s0";
  REQUIRE(run({"distill", "--config", w.train_cfg.string(), "--teacher", teacher.string(),
               "--unlabeled", (w.corpus / "unlabeled.conll").string(), "--out", zero.string(),
               "--kd-steps", "0"})
              .code == 0);
  CHECK(slurp(zero / "student.ckpt") == slurp(zero / "student_init.ckpt"));
}

TEST_CASE("eval and predict") {
  Workspace w;
  const fs::path ckpt = w.train("t") / "teacher.ckpt";
  const Checkpoint ck = load_checkpoint(ckpt);

  // Gold labels that are the model's own predictions score F1 = 1 (or 0 if it predicts no entity).
  const Corpus test = read_conll_file(w.corpus / "test.conll", ck.label_set);
  Corpus self = test;
  const auto pred = predict_corpus(ck, test);
  bool any_entity = false;
  for (std::size_t s = 0; s < pred.size(); ++s) {
    self.sentences[s].labels = pred[s];
    any_entity = any_entity || !extract_entities(pred[s], ck.label_set).empty();
  }
  write_conll_file(w.root / "self.conll", self);
  const Run e = run({"eval", "--checkpoint", ckpt.string(), "--corpus",
                     (w.root / "self.conll").string(), "--out", (w.root / "ev").string()});
  REQUIRE_MESSAGE(e.code == 0, e.err);
  CHECK(e.out.find("micro") != std::string::npos);
  const KeyValues report = parse_key_values(slurp(w.root / "ev" / "report.kv"));
  CHECK(std::stod(report.at("micro.f1")) == (any_entity ? 1.0 : 0.0));

  const Run mismatch = run({"eval", "--checkpoint", ckpt.string(), "--corpus",
                            (w.corpus / "test.conll").string(), "--labels", "B-X,I-X,O"});
  CHECK(mismatch.code == 1);
  CHECK(mismatch.err.find("error[LabelSetMismatch]") == 0);
  CHECK(mismatch.err.find("B-X") != std::string::npos);
  CHECK(mismatch.err.find("B-PER") != std::string::npos);

  spit(w.root / "empty.txt", "");
  const Run empty = run({"predict", "--checkpoint", ckpt.string(), "--input",
                         (w.root / "empty.txt").string()});
  CHECK(empty.code == 0);
  CHECK(empty.out.empty());

  // Golden output: the same predictions the library makes, in CoNLL form.
  std::string input, golden;
  for (std::size_t s = 0; s < test.size(); ++s) {
    const auto& toks = test.sentences[s].tokens;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      input += (i ? " " : "") + toks[i];
      golden += toks[i] + "\t" + ck.label_set.name(pred[s][i]) + "\n";
    }
    input += "\n";
    golden += "\n";
  }
  spit(w.root / "input.txt", input);
  const Run p = run({"predict", "--checkpoint", ckpt.string(), "--input",
                     (w.root / "input.txt").string()});
  REQUIRE(p.code == 0);
  CHECK(p.out == golden);
  const Corpus parsed = parse_conll(p.out, ck.label_set);  // also validates IOB2
  CHECK(parsed.size() == test.size());
}
