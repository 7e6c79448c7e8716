#include <doctest.h>

#include "concner/encoder.hpp"
#include "concner/error.hpp"
#include "concner/losses.hpp"
#include "support/helpers.hpp"
#include "support/model_fd.hpp"

using namespace concner;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.vocab_size = 12;
  c.embed_dim = 8;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ffn_dim = 16;
  c.max_len = 10;
  c.label_count = 9;
  c.init_seed = 17;
  c.init_scale = 0.5;
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

}  // namespace

TEST_CASE("parameter layout and initialization") {
  const EncoderConfig c = tiny();
  const auto layout = parameter_layout(c);
  REQUIRE(layout.size() == 2 + 16 * c.num_layers + 2);
  CHECK(layout.front().first == "tok_emb");
  CHECK(layout.front().second == Shape{12, 8});
  CHECK(layout[2].first == "layer0.attn.wq");
  CHECK(layout.back().first == "cls.bias");

  const ModelParams p = init_params(c);
  CHECK(p == init_params(c));
  CHECK(p.parameter_count() == 12 * 8 + 10 * 8 + (4 * (64 + 8) + 4 * 8 + 8 * 16 + 16 + 16 * 8 + 8) +
                                   9 * 8 + 9);
  for (double g : p.at("layer0.ln1.gain").values()) CHECK(g == 1.0);
  for (double b : p.at("layer0.ln2.bias").values()) CHECK(b == 0.0);
  for (double w : p.at("tok_emb").values()) CHECK(std::abs(w) <= 0.5);

  EncoderConfig other = c;
  other.init_seed = 18;
  CHECK_FALSE(init_params(other) == p);
}

TEST_CASE("config and parameter validation") {
  EncoderConfig c = tiny();
  c.num_heads = 3;
  CHECK(code_of([&] { c.validate(); }) == ErrorCode::ConfigError);
  ModelParams p = init_params(tiny());
  p.tensors[0] = Tensor({3, 8});
  CHECK(code_of([&] { check_params(p); }) == ErrorCode::ArchitectureMismatch);
}

TEST_CASE("padding does not change the hidden states of a sentence") {
  const ModelParams p = init_params(tiny());
  const std::vector<TokenId> a{2, 3, 4}, b{5, 6, 7, 8, 9, 10};
  const HiddenStates alone = encode(p, PaddedBatch::from_sentences({a}));
  const HiddenStates batched = encode(p, PaddedBatch::from_sentences({b, a}));
  REQUIRE(alone.hidden.rows() == 3);
  REQUIRE(batched.hidden.rows() == 9);
  CHECK(batched.offsets == std::vector<std::size_t>{0, 6, 9});
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 8; ++c)
      CHECK(std::abs(alone.hidden(r, c) - batched.hidden(6 + r, c)) < 1e-12);
}

TEST_CASE("classifier outputs distributions") {
  const ModelParams p = init_params(tiny());
  const HiddenStates h = encode(p, PaddedBatch::from_sentences({{2, 3, 4, 5}}));
  const Tensor probs = classify_rows(p, h.hidden);
  CHECK(probs.shape() == Shape{4, 9});
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (double v : probs.row(r)) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  const Tensor one = classify(p, h.hidden.row(1));
  for (std::size_t c = 0; c < 9; ++c) CHECK(one[c] == doctest::Approx(probs(1, c)).epsilon(1e-14));
}

TEST_CASE("sentence pooling averages unmasked rows") {
  const Tensor h({3, 2}, std::vector<double>{1, 2, 3, 4, 100, 100});
  const std::vector<std::uint8_t> mask{1, 1, 0};
  const Tensor r = pool_sentence(h, mask);
  CHECK(r[0] == 2.0);
  CHECK(r[1] == 3.0);
  const std::vector<std::uint8_t> none{0, 0, 0};
  CHECK(code_of([&] { pool_sentence(h, none); }) == ErrorCode::AllMasked);
}

TEST_CASE("encoder input errors") {
  const ModelParams p = init_params(tiny());
  CHECK(code_of([&] { encode(p, PaddedBatch::from_sentences({std::vector<TokenId>(11, 2)})); }) ==
        ErrorCode::SentenceTooLong);
  CHECK(code_of([&] { encode(p, PaddedBatch::from_sentences({{2, 99}})); }) ==
        ErrorCode::IdOutOfRange);
  CHECK(code_of([&] { encode(p, PaddedBatch::from_sentences({{2}, {}})); }) ==
        ErrorCode::AllMasked);
}

TEST_CASE("encoder gradients match finite differences") {
  const ModelParams p = init_params(tiny());
  const PaddedBatch batch = PaddedBatch::from_sentences({{2, 3, 4}, {5, 6}});
  const std::vector<LabelId> gold{0, 4, 8, 1, 8};
  const auto check = testing::model_gradient_check(p, [&](BoundModel& m) {
    const EncodedBatch e = encode(m, batch);
    return ce_loss(classify(m, e.hidden), gold, e.offsets);
  });
  CHECK(check.checked == p.parameter_count());
  CHECK(check.max_rel_error < 1e-4);
}
