#include <doctest.h>

#include <cmath>
#include <numeric>

#include "concner/error.hpp"
#include "concner/losses.hpp"
#include "support/helpers.hpp"

using namespace concner;

namespace {

std::vector<std::size_t> pairing(std::size_t n_pairs) {
  std::vector<std::size_t> p(2 * n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    p[i] = i + n_pairs;
    p[i + n_pairs] = i;
  }
  return p;
}

Tensor permute_rows(const Tensor& t, const std::vector<std::size_t>& perm) {
  Tensor out(t.shape());
  for (std::size_t r = 0; r < perm.size(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out(r, c) = t(perm[r], c);
  return out;
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

TEST_CASE("cross entropy closed forms and oracle") {
  const std::vector<std::size_t> one{0, 2};
  Tensor sure({2, 3}, 0.0);
  sure(0, 1) = 1.0;
  sure(1, 2) = 1.0;
  CHECK(ce_loss(sure, std::vector<LabelId>{1, 2}, one) == 0.0);
  CHECK(std::abs(ce_loss(Tensor({4, 9}, 1.0 / 9.0), std::vector<LabelId>{0, 3, 8, 5},
                         std::vector<std::size_t>{0, 1, 4}) -
                 std::log(9.0)) < 1e-12);

  Rng rng(1, "ce");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = rng.between(2, 20), y = 9, s = rng.between(1, std::min<std::size_t>(m, 8));
    const Tensor p = testing::random_distributions(rng, m, y);
    std::vector<LabelId> gold(m);
    for (auto& g : gold) g = rng.below(y);
    const auto offsets = testing::random_offsets(rng, s, m);
    CHECK(std::abs(ce_loss(p, gold, offsets) - oracle::ce(testing::to_mat(p), gold, offsets)) <
          1e-12);
  }
}

TEST_CASE("label contrast closed forms and oracle") {
  CHECK(std::abs(lcl_loss(Tensor({3, 4}, 0.7), std::vector<LabelId>{2, 2, 2}, 0.1) -
                 std::log(2.0)) < 1e-9);
  Rng rng(2, "lcl");
  CHECK(lcl_loss(testing::random_tensor(rng, {4, 3}), std::vector<LabelId>{0, 1, 2, 3}, 0.1) == 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = rng.between(2, 20), d = rng.between(1, 16);
    const Tensor h = testing::random_tensor(rng, {m, d});
    std::vector<LabelId> labels(m);
    for (auto& l : labels) l = rng.below(4);
    const double tau = rng.uniform(0.05, 1.0);
    CHECK(std::abs(lcl_loss(h, labels, tau) - oracle::lcl(testing::to_mat(h), labels, tau)) < 1e-10);
  }
  CHECK(code_of([] { lcl_loss(Tensor({1, 3}, 1.0), std::vector<LabelId>{0}, 0.1); }) ==
        ErrorCode::TooFewTokens);
}

TEST_CASE("translation contrast closed forms and oracle") {
  Rng rng(3, "tcl");
  CHECK(tcl_loss(testing::random_tensor(rng, {2, 5}), pairing(1), 0.1) == 0.0);
  CHECK(std::abs(tcl_loss(Tensor({4, 3}, 1.0), pairing(2), 0.1) - std::log(3.0)) < 1e-9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = rng.between(1, 4), d = rng.between(1, 16);
    const Tensor r = testing::random_tensor(rng, {2 * n, d});
    const double tau = rng.uniform(0.05, 1.0);
    CHECK(std::abs(tcl_loss(r, pairing(n), tau) - oracle::tcl(testing::to_mat(r), pairing(n), tau)) <
          1e-10);
  }
  CHECK(code_of([] { tcl_loss(Tensor({3, 2}, 1.0), std::vector<std::size_t>{1, 0, 2}, 0.1); }) ==
        ErrorCode::InvalidPairing);
  CHECK(code_of([] { tcl_loss(Tensor({4, 2}, 1.0), std::vector<std::size_t>{1, 2, 3, 0}, 0.1); }) ==
        ErrorCode::InvalidPairing);
}

TEST_CASE("translation contrast lower bound") {
  Rng rng(4, "tcl-bound");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = rng.between(1, 5);
    const double tau = rng.uniform(0.05, 1.0);
    const double bound = std::log(1.0 + static_cast<double>(2 * n - 2) * std::exp(-2.0 / tau));
    CHECK(tcl_loss(testing::random_tensor(rng, {2 * n, 3}), pairing(n), tau) >= bound - 1e-9);
  }
}

TEST_CASE("distillation loss closed forms and oracle") {
  Tensor student({1, 9}, 0.0);
  student(0, 0) = 1.0;
  CHECK(std::abs(kd_mse_loss(student, Tensor({1, 9}, 1.0 / 9.0), std::vector<std::size_t>{0, 1}) -
                 8.0 / 81.0) < 1e-15);
  Rng rng(5, "kd");
  const Tensor same = testing::random_distributions(rng, 4, 9);
  CHECK(kd_mse_loss(same, same, std::vector<std::size_t>{0, 2, 4}) == 0.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = rng.between(2, 20), s = rng.between(1, std::min<std::size_t>(m, 8));
    const Tensor a = testing::random_distributions(rng, m, 9), b = testing::random_distributions(rng, m, 9);
    const auto offsets = testing::random_offsets(rng, s, m);
    CHECK(std::abs(kd_mse_loss(a, b, offsets) -
                   oracle::kd(testing::to_mat(a), testing::to_mat(b), offsets)) < 1e-12);
  }
  CHECK(code_of([] {
          kd_mse_loss(Tensor({2, 9}), Tensor({2, 8}), std::vector<std::size_t>{0, 2});
        }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("joint objective") {
  const LossWeights w;
  CHECK(w.alpha == 0.5);
  CHECK(w.beta == 0.25);
  CHECK(w.tau_lcl == 0.1);
  CHECK(w.tau_tcl == 0.1);
  CHECK(joint_loss(2.0, 1.0, 1.0, w) == 1.5);
  CHECK(joint_loss(0.0, 0.0, 0.0, LossWeights{1.0, 1.0, 0.1, 0.1}) == 0.0);
  CHECK(joint_loss(3.0, 7.0, 9.0, LossWeights{0.5, 0.0, 0.1, 0.1}) == 1.5);

  Tape t;
  Var ce = t.constant(Tensor::scalar(0.3)), lcl = t.constant(Tensor::scalar(1.7)),
      tcl = t.constant(Tensor::scalar(2.9));
  CHECK(joint_loss(ce, lcl, tcl, w).value().item() == joint_loss(0.3, 1.7, 2.9, w));
  CHECK(joint_loss(ce, std::nullopt, std::nullopt, w).value().item() == 0.5 * 0.3);
  CHECK_THROWS_AS((LossWeights{-1.0, 0.25, 0.1, 0.1}.validate()), Error);
  CHECK_THROWS_AS((LossWeights{0.5, 0.25, 0.0, 0.1}.validate()), Error);
}

TEST_CASE("contrastive losses: scale and permutation invariance, nonnegativity") {
  Rng rng(6, "invariance");
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = rng.between(2, 12), d = rng.between(1, 8);
    const Tensor h = testing::random_tensor(rng, {m, d});
    std::vector<LabelId> labels(m);
    for (auto& l : labels) l = rng.below(3);
    const double base = lcl_loss(h, labels, 0.1);
    CHECK(base >= 0.0);

    Tensor scaled = h;
    const double k = rng.uniform(0.1, 10.0);
    for (auto& v : scaled.values()) v *= k;
    CHECK(std::abs(lcl_loss(scaled, labels, 0.1) - base) < 1e-9);

    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<LabelId> permuted_labels(m);
    for (std::size_t r = 0; r < m; ++r) permuted_labels[r] = labels[perm[r]];
    CHECK(std::abs(lcl_loss(permute_rows(h, perm), permuted_labels, 0.1) - base) < 1e-9);

    const std::size_t n = rng.between(1, 4);
    const Tensor r = testing::random_tensor(rng, {2 * n, d});
    const auto partner = pairing(n);
    const double tb = tcl_loss(r, partner, 0.1);
    CHECK(tb >= 0.0);
    Tensor rs = r;
    for (auto& v : rs.values()) v *= k;
    CHECK(std::abs(tcl_loss(rs, partner, 0.1) - tb) < 1e-9);
    std::vector<std::size_t> sp(2 * n), inverse(2 * n), relabeled(2 * n);
    std::iota(sp.begin(), sp.end(), 0);
    rng.shuffle(sp);
    for (std::size_t i = 0; i < 2 * n; ++i) inverse[sp[i]] = i;
    for (std::size_t i = 0; i < 2 * n; ++i) relabeled[i] = inverse[partner[sp[i]]];
    CHECK(std::abs(tcl_loss(permute_rows(r, sp), relabeled, 0.1) - tb) < 1e-9);
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(7, "loss-grads");
  const Tensor h = testing::random_tensor(rng, {6, 4});
  const std::vector<LabelId> labels{0, 1, 0, 2, 1, 0};
  const std::vector<std::size_t> offsets{0, 2, 6};
  auto check = [&](const std::function<Var(Var)>& f, const Tensor& x) {
    Tape t;
    Var v = t.variable(x);
    t.backward(f(v));
    const Tensor g = v.grad();
    const auto num = finite_difference_gradient(
        [&](std::span<const double> theta) {
          Tape t2;
          return f(t2.variable(Tensor(x.shape(), std::vector<double>(theta.begin(), theta.end()))))
              .value()
              .item();
        },
        x.values(), 1e-6);
    for (std::size_t j = 0; j < num.size(); ++j) {
      CHECK(std::abs(num[j] - g[j]) <= 1e-6 * std::max({1.0, std::abs(num[j])}));
    }
  };
  check([&](Var v) { return lcl_loss(v, labels, 0.1); }, h);
  check([&](Var v) { return tcl_loss(v, pairing(3), 0.1); }, h);
  const Tensor p = testing::random_distributions(rng, 6, 9);
  check([&](Var v) { return ce_loss(v, std::vector<LabelId>{0, 4, 8, 1, 2, 3}, offsets); }, p);
  const Tensor teacher = testing::random_distributions(rng, 6, 9);
  check([&](Var v) { return kd_mse_loss(v, teacher, offsets); }, p);
}
