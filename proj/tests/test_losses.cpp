#include "cardseg/losses.hpp"

#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace cardseg;

namespace {

LabelMask random_mask(Rng& rng, int h, int w, int num_classes = 4) {
  LabelMask m(h, w);
  for (auto& v : m.values) v = static_cast<uint8_t>(rng.uniform_int(0, num_classes - 1));
  return m;
}

// Independent oracle: literal set-counting over every pixel.
double dice_oracle(const LabelMask& a, const LabelMask& b, int cls) {
  int64_t in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < a.height; ++i)
    for (int j = 0; j < a.width; ++j) {
      if (a.at(i, j) == cls) ++in_a;
      if (b.at(i, j) == cls) ++in_b;
      if (a.at(i, j) == cls && b.at(i, j) == cls) ++in_both;
    }
  if (in_a + in_b == 0) return 1.0;
  return 2.0 * static_cast<double>(in_both) / static_cast<double>(in_a + in_b);
}

}  // namespace

TEST_CASE("dice_coefficient basics") {
  LabelMask a(2, 2), b(2, 2);
  a.at(0, 0) = 1; b.at(0, 0) = 1;
  CHECK(dice_coefficient(a, a, 1) == 1.0);
  CHECK(dice_coefficient(a, b, 1) == 1.0);

  LabelMask c(2, 2), d(2, 2);
  c.at(0, 0) = 1;
  d.at(1, 1) = 1;
  CHECK(dice_coefficient(c, d, 1) == 0.0);  // disjoint nonempty sets

  LabelMask e(2, 2), f(2, 2);
  e.at(0, 0) = 2; e.at(0, 1) = 2;
  f.at(0, 1) = 2; f.at(1, 0) = 2;
  CHECK(dice_coefficient(e, f, 2) == doctest::Approx(0.5));  // |A|=2,|B|=2,overlap 1

  CHECK(dice_coefficient(a, b, 3) == 1.0);  // both empty
  CHECK_THROWS_AS((void)dice_coefficient(a, LabelMask(3, 2), 1), ShapeError);
}

TEST_CASE("dice_coefficient is symmetric and matches the oracle") {
  Rng rng(29);
  for (int t = 0; t < 200; ++t) {
    LabelMask a = random_mask(rng, 8, 8);
    LabelMask b = random_mask(rng, 8, 8);
    for (int cls = 0; cls < 4; ++cls) {
      CHECK(dice_coefficient(a, b, cls) == dice_coefficient(b, a, cls));
      CHECK(dice_coefficient(a, b, cls) == dice_oracle(a, b, cls));
    }
  }
}

TEST_CASE("soft_dice_loss vanishes on a perfect prediction") {
  LabelMask m(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 4; ++j) m.at(i, j) = 1;
  Tensor target = one_hot({m}, 4);
  // probs == one-hot is exactly normalized
  CHECK(soft_dice_loss(nullptr, target, target).item() < 1e-4);
}

TEST_CASE("soft_dice_loss on uniform probabilities matches a summation oracle") {
  const int H = 4, W = 4, C = 4;
  LabelMask m(H, W);
  for (int i = 0; i < H / 2; ++i)
    for (int j = 0; j < W; ++j) m.at(i, j) = 1;  // class 1 covers half the pixels
  Tensor probs = Tensor::full({1, C, H, W}, 1.0 / C);
  Tensor target = one_hot({m}, C);

  // per-pixel summation oracle
  const double eps = 1e-5;
  double loss_oracle = 0.0;
  for (int c = 1; c < C; ++c) {
    double inter = 0, sp = 0, st = 0;
    for (int p = 0; p < H * W; ++p) {
      const double pv = 1.0 / C;
      const double tv = target.data()[static_cast<size_t>(c * H * W + p)];
      inter += pv * tv;
      sp += pv;
      st += tv;
    }
    loss_oracle += 1.0 - (2 * inter + eps) / (sp + st + eps);
  }
  loss_oracle /= (C - 1);
  CHECK(soft_dice_loss(nullptr, probs, target).item() == doctest::Approx(loss_oracle).epsilon(1e-12));
}

TEST_CASE("soft_dice_loss rejects unnormalized probabilities") {
  LabelMask m(2, 2);
  Tensor target = one_hot({m}, 4);
  Tensor bad = Tensor::full({1, 4, 2, 2}, 0.3);
  CHECK_THROWS_AS((void)soft_dice_loss(nullptr, bad, target), std::invalid_argument);
}

TEST_CASE("soft_dice_loss gradient matches finite differences") {
  Rng rng(37);
  LabelMask m = random_mask(rng, 4, 4);
  Tensor target = one_hot({m}, 4);
  Tensor logits = gradcheck::random_tensor(rng, {1, 4, 4, 4});
  std::vector<Tensor> inputs{logits};
  const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
    return soft_dice_loss(t, softmax_channels(t, logits), target);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("soft_dice_loss decreases toward the target along interpolation") {
  Rng rng(43);
  LabelMask m = random_mask(rng, 4, 4);
  Tensor target = one_hot({m}, 4);
  double prev = 1e300;
  for (int k = 0; k <= 10; ++k) {
    const double t = k / 10.0;
    Tensor probs(target.shape());
    for (size_t i = 0; i < probs.data().size(); ++i)
      probs.data()[i] = (1.0 - t) * 0.25 + t * target.data()[i];
    const double loss = soft_dice_loss(nullptr, probs, target).item();
    CHECK(loss < prev);
    prev = loss;
  }
}

TEST_CASE("cross entropy of uniform logits is ln(C)") {
  LabelMask m(2, 2);
  m.at(0, 1) = 3;
  Tensor logits = Tensor::full({1, 4, 2, 2}, 1.3);
  CHECK(categorical_cross_entropy(nullptr, logits, {m}).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-9));
}

TEST_CASE("cross entropy is near zero with a +20 margin on the target") {
  LabelMask m(2, 2);
  m.at(0, 0) = 1; m.at(1, 1) = 2;
  Tensor logits = Tensor::zeros({1, 4, 2, 2});
  for (int p = 0; p < 4; ++p) {
    const int cls = m.values[static_cast<size_t>(p)];
    logits.data()[static_cast<size_t>(cls * 4 + p)] = 20.0;
  }
  CHECK(categorical_cross_entropy(nullptr, logits, {m}).item() < 1e-8);
}

TEST_CASE("cross entropy rejects out-of-range labels with coordinates") {
  LabelMask m(2, 2);
  m.at(1, 0) = 7;
  Tensor logits = Tensor::zeros({1, 4, 2, 2});
  CHECK_THROWS_WITH_AS((void)categorical_cross_entropy(nullptr, logits, {m}),
                       doctest::Contains("(1,0)"), std::invalid_argument);
}

TEST_CASE("cross entropy is shift invariant and passes gradcheck") {
  Rng rng(47);
  LabelMask m = random_mask(rng, 4, 4);
  Tensor logits = gradcheck::random_tensor(rng, {1, 4, 4, 4});
  Tensor shifted(logits.shape(), logits.data());
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 4; ++c) shifted.data()[static_cast<size_t>(c * 16 + p)] += 3.25;
  CHECK(std::abs(categorical_cross_entropy(nullptr, logits, {m}).item() -
                 categorical_cross_entropy(nullptr, shifted, {m}).item()) < 1e-9);

  std::vector<Tensor> inputs{logits};
  const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
    return categorical_cross_entropy(t, logits, {m});
  });
  CHECK(err < 1e-4);
}

TEST_CASE("evaluate_set identity, presence rule, and the brute-force oracle") {
  Rng rng(53);
  LabelMask m = random_mask(rng, 8, 8);
  DiceReport perfect = evaluate_set({m}, {m});
  for (const auto& [cls, d] : perfect.per_class) CHECK(d == 1.0);
  CHECK(perfect.average == 1.0);

  // single sample containing classes {1,3} only
  LabelMask t(4, 4);
  t.at(0, 0) = 1; t.at(3, 3) = 3;
  DiceReport presence = evaluate_set({LabelMask(4, 4)}, {t});
  CHECK(presence.per_class.count(1) == 1);
  CHECK(presence.per_class.count(3) == 1);
  CHECK(presence.per_class.count(2) == 0);

  CHECK_THROWS_AS((void)evaluate_set({}, {}), std::invalid_argument);

  // oracle equivalence over random pairs
  for (int trial = 0; trial < 1000; ++trial) {
    LabelMask a = random_mask(rng, 8, 8);
    LabelMask b = random_mask(rng, 8, 8);
    DiceReport r = evaluate_set({a}, {b});
    for (const auto& [cls, d] : r.per_class) CHECK(d == dice_oracle(a, b, cls));
  }
}
