#include <doctest.h>

#include <cmath>
#include <set>

#include "concner/error.hpp"
#include "concner/eval.hpp"
#include "concner/trainer.hpp"
#include "support/helpers.hpp"

using namespace concner;

namespace {

GenConfig tiny_gen(std::uint64_t seed = 5) {
  GenConfig c;
  c.seed = seed;
  c.n_train = 24;
  c.n_dev = 8;
  c.n_unlabeled = 20;
  c.n_test = 8;
  return c;
}

TrainConfig tiny_train() {
  TrainConfig c;
  c.batch_size = 4;
  c.epochs = 2;
  c.eval_every = 5;
  c.encoder.embed_dim = 8;
  c.encoder.num_layers = 1;
  c.encoder.num_heads = 2;
  c.encoder.ffn_dim = 16;
  return c;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoError;
}

// The training objective recomputed from public pieces, for one paired batch.
double batch_objective(const ModelParams& params, const BilingualBatch& batch,
                       const TrainConfig& cfg) {
  Tape tape;
  BoundModel model(tape, params, false);
  const EncodedBatch enc = encode(model, batch.inputs);
  Var ce = ce_loss(classify(model, enc.hidden), batch.labels, enc.offsets);
  std::optional<Var> lcl, tcl;
  if (cfg.use_lcl) lcl = lcl_loss(enc.hidden, batch.labels, cfg.weights.tau_lcl);
  if (cfg.use_tcl) tcl = tcl_loss(pool_sentences(enc), batch.partner, cfg.weights.tau_tcl);
  return joint_loss(ce, lcl, tcl, cfg.weights).value().item();
}

}  // namespace

TEST_CASE("bilingual batches pair each sentence with its translation") {
  const BilingualCorpora c = generate(tiny_gen());
  const Vocabulary v = training_vocabulary(c);
  const std::vector<std::size_t> one{3};
  const BilingualBatch b1 = build_bilingual_batch(c.d_src, c.d_tgt, one, v);
  CHECK(b1.sentences() == 2);
  CHECK(b1.partner == std::vector<std::size_t>{1, 0});
  CHECK(b1.tokens == c.d_src.sentences[3].size() + c.d_tgt.sentences[3].size());

  const std::vector<std::size_t> idx{0, 5, 9, 2};
  const BilingualBatch b = build_bilingual_batch(c.d_src, c.d_tgt, idx, v);
  REQUIRE(b.partner.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(b.partner[b.partner[i]] == i);
    CHECK(b.partner[i] != i);
  }
  CHECK(b.offsets.size() == 9);
  CHECK(b.offsets.back() == b.tokens);
  CHECK(b.labels.size() == b.tokens);
  for (std::size_t s = 0; s < 8; ++s) CHECK(b.inputs.valid_count(s) == b.offsets[s + 1] - b.offsets[s]);

  const std::vector<std::size_t> bad{0, 999};
  CHECK(code_of([&] { build_bilingual_batch(c.d_src, c.d_tgt, bad, v); }) ==
        ErrorCode::IndexOutOfRange);
  Corpus shorter = c.d_tgt;
  shorter.sentences.pop_back();
  CHECK(code_of([&] { build_bilingual_batch(c.d_src, shorter, idx, v); }) ==
        ErrorCode::MisalignedCorpora);

  const BilingualBatch mono = build_monolingual_batch(c.d_tgt, idx, v);
  CHECK(mono.sentences() == 4);
  CHECK(mono.partner.empty());
}

TEST_CASE("batch with fourteen tokens") {
  const LabelSet ls;
  Corpus src{{}, ls, "src"}, tgt{{}, ls, "tgt"};
  for (std::size_t len : {3u, 4u}) {
    LabeledSentence s{std::vector<std::string>(len, "a"), std::vector<LabelId>(len, ls.outside())};
    src.sentences.push_back(s);
    tgt.sentences.push_back(s);
  }
  Vocabulary v;
  v.add("a");
  const std::vector<std::size_t> idx{0, 1};
  const BilingualBatch b = build_bilingual_batch(src, tgt, idx, v);
  CHECK(b.tokens == 14);
  CHECK(b.offsets == std::vector<std::size_t>{0, 3, 7, 10, 14});
  CHECK(b.partner == std::vector<std::size_t>{2, 3, 0, 1});
}

TEST_CASE("config validation") {
  TrainConfig c = tiny_train();
  c.use_src = c.use_tgt = false;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigError);
  c = tiny_train();
  c.use_tgt = false;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigError);  // TCL needs both sides
  c.use_tcl = false;
  CHECK_NOTHROW(c.validate());
  c.weights.tau_lcl = 0.0;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  const BilingualCorpora c = generate(tiny_gen());
  TrainConfig cfg = tiny_train();
  cfg.optimizer.learning_rate = 0.0;
  const TeacherResult r = train_teacher(cfg, c, c.d_dev);
  CHECK(r.steps == 12);
  CHECK(r.best.params == r.init);
}

TEST_CASE("training is deterministic and logs every step") {
  const BilingualCorpora c = generate(tiny_gen());
  const TrainConfig cfg = tiny_train();
  const TeacherResult a = train_teacher(cfg, c, c.d_dev);
  const TeacherResult b = train_teacher(cfg, c, c.d_dev);
  CHECK(a.best.params == b.best.params);
  CHECK(format_log(a.log, false) == format_log(b.log, false));
  CHECK(serialize_checkpoint(a.best) == serialize_checkpoint(b.best));

  std::size_t steps = 0, devs = 0;
  for (const auto& e : a.log) (e.kind == LogEntry::Kind::Step ? steps : devs) += 1;
  CHECK(steps == 12);  // 24 sentences / 4 per batch * 2 epochs
  CHECK(devs == 3);    // steps 5, 10 and the final 12

  TrainConfig other = cfg;
  other.seed = 2;
  CHECK(train_teacher(other, c, c.d_dev).best.params != a.best.params);
}

TEST_CASE("best checkpoint carries the highest dev F1 and the step it was seen") {
  const BilingualCorpora c = generate(tiny_gen());
  TrainConfig cfg = tiny_train();
  cfg.epochs = 4;
  cfg.eval_every = 3;
  const TeacherResult r = train_teacher(cfg, c, c.d_dev);
  double best = -1.0;
  std::size_t best_step = 0;
  for (const auto& e : r.log) {
    if (e.kind == LogEntry::Kind::Dev && e.dev_f1 > best) {
      best = e.dev_f1;
      best_step = e.step;
    }
  }
  CHECK(r.best.dev_f1 == best);
  CHECK(r.best.step == best_step);
  CHECK(entity_f1(c.d_dev, predict_corpus(r.best, c.d_dev)).micro.f1 == best);
}

TEST_CASE("disabled terms vanish from the objective") {
  const BilingualCorpora c = generate(tiny_gen());
  TrainConfig cfg = tiny_train();
  cfg.use_lcl = false;
  cfg.use_tcl = false;
  const TeacherResult r = train_teacher(cfg, c, c.d_dev);
  for (const auto& e : r.log) {
    if (e.kind != LogEntry::Kind::Step) continue;
    CHECK_FALSE(e.losses.l_lcl.has_value());
    CHECK_FALSE(e.losses.l_tcl.has_value());
    CHECK(std::abs(e.losses.l_total - cfg.weights.alpha * e.losses.l_ce) <= 1e-12);
  }
  const std::string log = format_log(r.log, false);
  CHECK(log.rfind("# step", 0) == 0);
  CHECK(log.find("\t-\t-\t") != std::string::npos);
}

TEST_CASE("a small step lowers the objective of the batch it was taken on") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    GenConfig g = tiny_gen(seed);
    g.n_train = 4;
    g.n_unlabeled = 4;
    g.n_dev = 4;
    g.n_test = 4;
    const BilingualCorpora c = generate(g);
    TrainConfig cfg = tiny_train();
    cfg.epochs = 1;
    cfg.seed = seed;
    cfg.optimizer.learning_rate = 1e-4;
    const Vocabulary v = training_vocabulary(c);
    const TeacherResult r = train_teacher(cfg, c, c.d_dev, v);
    REQUIRE(r.steps == 1);
    const std::vector<std::size_t> all{0, 1, 2, 3};
    const BilingualBatch batch = build_bilingual_batch(c.d_src, c.d_tgt, all, v);
    const double before = batch_objective(r.init, batch, cfg);
    const double after = batch_objective(r.best.params, batch, cfg);
    CHECK(std::abs(before - r.log.front().losses.l_total) < 1e-12);
    CHECK(after < before);
  }
}

TEST_CASE("non-finite losses stop training with a batch dump") {
  const BilingualCorpora c = generate(tiny_gen());
  TrainConfig cfg = tiny_train();
  cfg.optimizer.learning_rate = 1e300;
  try {
    train_teacher(cfg, c, c.d_dev);
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("distillation") {
  const BilingualCorpora c = generate(tiny_gen());
  const TrainConfig cfg = tiny_train();
  const Checkpoint teacher = train_teacher(cfg, c, c.d_dev).best;
  const std::string teacher_bytes = serialize_checkpoint(teacher);

  SUBCASE("zero steps return the init and the teacher is untouched") {
    TrainConfig k = cfg;
    k.kd_steps = 0;
    const StudentResult s = distill_student(teacher, c.d_unlabeled, k);
    CHECK(s.steps == 0);
    CHECK(s.student.params == s.init);
    CHECK(serialize_checkpoint(teacher) == teacher_bytes);
  }
  SUBCASE("all batches are used, partial ones included") {
    TrainConfig k = cfg;
    k.kd_epochs = 2;
    const StudentResult s = distill_student(teacher, c.d_unlabeled, k);
    CHECK(s.steps == 10);  // ceil(20 / 4) * 2
    CHECK(s.student.dev_f1 == 0.0);
    CHECK(s.student.vocab == teacher.vocab);
    CHECK(serialize_checkpoint(teacher) == teacher_bytes);
    k.kd_steps = 3;
    CHECK(distill_student(teacher, c.d_unlabeled, k).steps == 3);
  }
  SUBCASE("a student initialised as the teacher has zero loss and stays put") {
    TrainConfig k = cfg;
    k.optimizer.weight_decay = 0.0;
    k.kd_epochs = 1;
    const StudentResult s = distill_student(teacher, c.d_unlabeled, k, teacher.params);
    for (const auto& e : s.log) CHECK(*e.losses.l_kd == 0.0);
    CHECK(s.student.params == teacher.params);
  }
  SUBCASE("architecture mismatches are rejected") {
    TrainConfig k = cfg;
    k.encoder.embed_dim = 12;
    CHECK(code_of([&] { distill_student(teacher, c.d_unlabeled, k); }) ==
          ErrorCode::ArchitectureMismatch);
    EncoderConfig e = teacher.params.config;
    e.vocab_size += 1;
    CHECK(code_of([&] { distill_student(teacher, c.d_unlabeled, cfg, init_params(e)); }) ==
          ErrorCode::ArchitectureMismatch);
  }
}

TEST_CASE("argmax breaks ties toward the lowest label id") {
  Tensor p({3, 4}, 0.25);
  p(1, 2) = 0.4;
  p(1, 3) = 0.4;
  p(2, 3) = 0.7;
  CHECK(argmax_rows(p) == std::vector<LabelId>{0, 2, 3});
}

TEST_CASE("predictions are valid IOB2 and match the per-token argmax where already valid") {
  const BilingualCorpora c = generate(tiny_gen());
  const Checkpoint ck = train_teacher(tiny_train(), c, c.d_dev).best;
  const LabelSet& ls = ck.label_set;
  const auto raw = argmax_corpus(ck.params, ck.vocab, c.d_test);
  const auto fixed = predict_corpus(ck, c.d_test);
  for (std::size_t s = 0; s < fixed.size(); ++s) {
    CHECK(validate_iob2(fixed[s], ls).empty());
    CHECK(fixed[s] == repair_iob2(raw[s], ls));
    CHECK(fixed[s] == predict(ck.params, ck.vocab.encode(c.d_test.sentences[s].tokens), ls));
  }
  std::vector<TokenId> too_long(ck.params.config.max_len + 1, Vocabulary::kUnk);
  CHECK(code_of([&] { predict(ck.params, too_long, ls); }) == ErrorCode::SentenceTooLong);
}
