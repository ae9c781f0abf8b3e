#include "cardseg/tensor.hpp"

#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"

using namespace cardseg;
using gradcheck::random_tensor;
using gradcheck::weighted_sum;

TEST_CASE("conv2d identity kernel reproduces the input") {
  Tensor x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor w({1, 1, 1, 1}, std::vector<double>{1.0});
  Tensor b({1}, std::vector<double>{0.0});
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  for (int i = 0; i < 9; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d all-ones 3x3 kernel sums the window") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor b({1}, std::vector<double>{0.0});
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d output dims follow the stride/padding arithmetic") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {2, 3, 8, 10});
  Tensor w = random_tensor(rng, {4, 3, 3, 3});
  Tensor b = random_tensor(rng, {4});
  CHECK(conv2d(nullptr, x, w, b, 1, 1).shape() == Shape{2, 4, 8, 10});
  CHECK(conv2d(nullptr, x, w, b, 2, 1).shape() == Shape{2, 4, 4, 5});
}

TEST_CASE("conv2d rejects channel mismatch") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w = Tensor::zeros({1, 3, 3, 3});
  Tensor b = Tensor::zeros({1});
  CHECK_THROWS_AS((void)conv2d(nullptr, x, w, b, 1, 1), ShapeError);
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor x = random_tensor(rng, {2, 2, 5, 5});
    Tensor w = random_tensor(rng, {3, 2, 3, 3});
    Tensor b = random_tensor(rng, {3});
    Rng wrng(100 + trial);
    std::vector<Tensor> inputs{x, w, b};
    const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
      Rng local(wrng);  // same projection weights every call
      return weighted_sum(t, conv2d(t, x, w, b, 1, 1), local);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("transposed_conv2d expands a single pixel into the kernel") {
  Tensor x({1, 1, 1, 1}, std::vector<double>{3.5});
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0);
  Tensor y = transposed_conv2d(nullptr, x, w, 2);
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.data()) CHECK(v == doctest::Approx(3.5));
}

TEST_CASE("transposed_conv2d with zero kernel yields zeros") {
  Rng rng(3);
  Tensor x = random_tensor(rng, {1, 2, 3, 3});
  Tensor w = Tensor::zeros({2, 4, 2, 2});
  Tensor y = transposed_conv2d(nullptr, x, w, 2);
  CHECK(y.shape() == Shape{1, 4, 6, 6});
  for (double v : y.data()) CHECK(v == 0.0);
}

TEST_CASE("transposed_conv2d doubles spatial dims and passes gradcheck") {
  Rng rng(13);
  Tensor x = random_tensor(rng, {1, 3, 4, 4});
  Tensor w = random_tensor(rng, {3, 2, 2, 2});
  CHECK(transposed_conv2d(nullptr, x, w, 2).shape() == Shape{1, 2, 8, 8});
  std::vector<Tensor> inputs{x, w};
  const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
    Rng local(55);
    return weighted_sum(t, transposed_conv2d(t, x, w, 2), local);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("transposed_conv2d rejects channel mismatch") {
  Tensor x = Tensor::zeros({1, 2, 3, 3});
  Tensor w = Tensor::zeros({3, 2, 2, 2});
  CHECK_THROWS_AS((void)transposed_conv2d(nullptr, x, w, 2), ShapeError);
}

TEST_CASE("maxpool2d picks the window max and rejects odd dims") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(maxpool2d(nullptr, x).item() == doctest::Approx(4.0));
  Tensor c = Tensor::full({1, 2, 4, 4}, 0.7);
  Tensor pooled = maxpool2d(nullptr, c);
  for (double v : pooled.data()) CHECK(v == doctest::Approx(0.7));
  CHECK_THROWS_AS((void)maxpool2d(nullptr, Tensor::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("maxpool2d backward routes exactly one unit per window") {
  Rng rng(17);
  Tensor x = random_tensor(rng, {1, 2, 6, 6});
  Tape tape;
  Tensor loss = sum_all(&tape, maxpool2d(&tape, x));
  tape.backward(loss);
  // brute force: per window, exactly one gradient of 1 at the max position
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 6; i += 2)
      for (int j = 0; j < 6; j += 2) {
        int ones = 0;
        double win_max = -1e300;
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj)
            win_max = std::max(win_max, x.data()[(c * 6 + i + di) * 6 + j + dj]);
        for (int di = 0; di < 2; ++di)
          for (int dj = 0; dj < 2; ++dj) {
            const double g = x.grad()[(c * 6 + i + di) * 6 + j + dj];
            CHECK((g == 0.0 || g == 1.0));
            if (g == 1.0) {
              ++ones;
              CHECK(x.data()[(c * 6 + i + di) * 6 + j + dj] == doctest::Approx(win_max));
            }
          }
        CHECK(ones == 1);
      }
}

TEST_CASE("relu definition and gradient away from zero") {
  Tensor x({3}, {-1.0, 0.0, 2.0});
  Tensor y = relu(nullptr, x);
  CHECK(y.data() == std::vector<double>{0.0, 0.0, 2.0});
  Tensor neg = relu(nullptr, Tensor::full({4}, -3.0));
  for (double v : neg.data()) CHECK(v == 0.0);

  Rng rng(23);
  Tensor z({2, 1, 4, 4}, true);
  for (double& v : z.data()) {
    v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < 1e-2) v = v < 0 ? -1e-2 : 1e-2;  // bounded away from the kink
  }
  std::vector<Tensor> inputs{z};
  const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
    Rng local(77);
    return weighted_sum(t, relu(t, z), local);
  });
  CHECK(err < 1e-4);
}

TEST_CASE("concat_channels stacks and splits back") {
  Rng rng(5);
  Tensor a = random_tensor(rng, {1, 2, 4, 4});
  Tensor b = random_tensor(rng, {1, 3, 4, 4});
  Tensor y = concat_channels(nullptr, a, b);
  CHECK(y.shape() == Shape{1, 5, 4, 4});
  for (int i = 0; i < 2 * 16; ++i) CHECK(y.data()[i] == a.data()[i]);
  for (int i = 0; i < 3 * 16; ++i) CHECK(y.data()[2 * 16 + i] == b.data()[i]);
  CHECK_THROWS_AS((void)concat_channels(nullptr, a, Tensor::zeros({1, 1, 2, 4})), ShapeError);
}

TEST_CASE("add is elementwise with pass-through gradients") {
  Tensor a({2}, {1, 2}, true);
  Tensor b({2}, {3, 4});
  Tape tape;
  Tensor y = add(&tape, a, b);
  CHECK(y.data() == std::vector<double>{4, 6});
  tape.backward(sum_all(&tape, y));
  CHECK(a.grad() == std::vector<double>{1, 1});
  CHECK_THROWS_AS((void)add(nullptr, a, Tensor::zeros({3})), ShapeError);

  Tensor z({2}, {5, 6});
  Tensor same = add(nullptr, z, Tensor::zeros({2}));
  CHECK(same.data() == z.data());
}

TEST_CASE("softmax_channels is a per-pixel distribution") {
  Tensor uniform_probs = softmax_channels(nullptr, Tensor::full({1, 4, 2, 2}, 0.3));
  for (double v : uniform_probs.data()) CHECK(v == doctest::Approx(0.25));

  Tensor two({1, 2, 1, 1}, {0.0, std::log(3.0)});
  Tensor p = softmax_channels(nullptr, two);
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-9));

  // shift invariance
  Rng rng(31);
  Tensor logits = random_tensor(rng, {1, 3, 2, 2}, -2, 2, false);
  Tensor shifted(logits.shape(), logits.data());
  for (int p2 = 0; p2 < 4; ++p2)
    for (int c = 0; c < 3; ++c) shifted.data()[c * 4 + p2] += 5.0;
  Tensor pa = softmax_channels(nullptr, logits);
  Tensor pb = softmax_channels(nullptr, shifted);
  for (size_t i = 0; i < pa.data().size(); ++i)
    CHECK(std::abs(pa.data()[i] - pb.data()[i]) < 1e-12);

  // channels sum to one and stay positive
  for (int px = 0; px < 4; ++px) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      CHECK(pa.data()[c * 4 + px] > 0.0);
      s += pa.data()[c * 4 + px];
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("backward fills linear and quadratic gradients") {
  Rng rng(41);
  Tensor x = random_tensor(rng, {2, 3});
  {
    Tape tape;
    tape.backward(sum_all(&tape, x));
    for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));
    CHECK(tape.backward_visits() == tape.node_count());
  }
  x.zero_grad();
  {
    Tape tape;
    tape.backward(sum_all(&tape, mul(&tape, x, x)));
    for (size_t i = 0; i < x.data().size(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i]));
  }
}

TEST_CASE("backward rejects non-scalar losses") {
  Tape tape;
  Tensor x = Tensor::full({2}, 1.0, true);
  Tensor y = add(&tape, x, x);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("gradients accumulate across fan-out") {
  Tensor x({2}, {1.0, 2.0}, true);
  Tape tape;
  Tensor y = add(&tape, x, x);
  tape.backward(sum_all(&tape, y));
  CHECK(x.grad() == std::vector<double>{2.0, 2.0});
}

TEST_CASE("forward is deterministic") {
  Rng rng(59);
  Tensor x = random_tensor(rng, {1, 2, 6, 6});
  Tensor w = random_tensor(rng, {3, 2, 3, 3});
  Tensor b = random_tensor(rng, {3});
  Tensor y1 = conv2d(nullptr, x, w, b, 1, 1);
  Tensor y2 = conv2d(nullptr, x, w, b, 1, 1);
  CHECK(y1.data() == y2.data());
}

TEST_CASE("adam first step moves by ~lr*sign(g)") {
  Parameter p("w", Tensor({3}, {1.0, -2.0, 0.5}, true));
  const std::vector<double> before = p.value.data();
  p.value.grad() = {0.2, -0.4, 0.001};
  std::vector<Parameter*> ps{&p};
  adam_step(ps, 0.01);
  for (int i = 0; i < 3; ++i) {
    const double delta = p.value.data()[i] - before[i];
    const double sign = i == 1 ? 1.0 : -1.0;  // -lr * sign(g)
    CHECK(delta == doctest::Approx(sign * 0.01).epsilon(1e-6));
  }
  CHECK(p.step_count == 1);
  CHECK_FALSE(p.value.has_grad());
}

TEST_CASE("adam with zero gradient keeps parameters in place") {
  Parameter p("w", Tensor({2}, {1.0, 2.0}, true));
  p.value.grad() = {0.0, 0.0};
  std::vector<Parameter*> ps{&p};
  adam_step(ps, 0.1);
  CHECK(p.value.data() == std::vector<double>{1.0, 2.0});
}

TEST_CASE("adam rejects missing gradients") {
  Parameter p("w", Tensor({2}, {1.0, 2.0}, true));
  std::vector<Parameter*> ps{&p};
  CHECK_THROWS(adam_step(ps, 0.1));
}

TEST_CASE("adam converges on the scalar quadratic") {
  Parameter w("w", Tensor({1}, {0.0}, true));
  std::vector<Parameter*> ps{&w};
  for (int step = 0; step < 100; ++step) {
    Tape tape;
    Tensor diff = add(&tape, w.value, Tensor::full({1}, -3.0));
    Tensor loss = sum_all(&tape, mul(&tape, diff, diff));
    tape.backward(loss);
    adam_step(ps, 0.1);
  }
  CHECK(std::abs(w.value.data()[0] - 3.0) < 0.5);
}

TEST_CASE("gradcheck sweep across all differentiable ops") {
  Rng rng(71);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, {1, 2, 4, 4});
    Tensor w = random_tensor(rng, {2, 2, 3, 3});
    Tensor b = random_tensor(rng, {2});
    Tensor tw = random_tensor(rng, {2, 2, 2, 2});
    std::vector<Tensor> inputs{x, w, b, tw};
    const uint64_t pseed = 1000 + static_cast<uint64_t>(trial);
    const double err = gradcheck::max_rel_err(inputs, [&](Tape* t) {
      Tensor h = relu(t, conv2d(t, x, w, b, 1, 1));
      h = maxpool2d(t, h);
      h = transposed_conv2d(t, h, tw, 2);
      h = softmax_channels(t, h);
      Rng local(pseed);
      return weighted_sum(t, h, local);
    });
    CHECK(err < 1e-4);
  }
}
