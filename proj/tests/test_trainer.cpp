#include "cardseg/trainer.hpp"

#include <cmath>

#include "cardseg/phantom.hpp"
#include "doctest.h"

using namespace cardseg;

namespace {

// Tiny but learnable corpus: phantom slices cropped and normalized.
std::vector<SliceSample> phantom_slices(Vendor v, int patients, int crop = 32,
                                        uint64_t seed = 0) {
  PhantomConfig c;
  c.image_size = 32;
  c.lv_radius_range = {4.0, 6.0};
  c.myo_thickness_range = {2.0, 3.0};
  c.rv_radius_range = {4.0, 5.0};
  c.center_jitter = 2.0;
  c.seed = seed;
  std::vector<SliceSample> out;
  for (int i = 0; i < patients; ++i) {
    VolumeRecord r = generate_patient(c, v, i);
    for (SliceSample& s : extract_ed_es_slices(r)) {
      s.image = normalize_intensity(center_crop(s.image, crop, crop));
      if (s.mask) s.mask = center_crop(*s.mask, crop, crop);
      out.push_back(std::move(s));
    }
  }
  return out;
}

NetworkConfig tiny_net() {
  NetworkConfig n;
  n.depth = 2;
  n.base_filters = 4;
  return n;
}

}  // namespace

TEST_CASE("loss names round trip") {
  for (auto k : {LossKind::kCrossEntropy, LossKind::kDice, LossKind::kSumOfBoth})
    CHECK(loss_from_name(loss_name(k)) == k);
  CHECK_THROWS_AS((void)loss_from_name("mse"), std::invalid_argument);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training reduces the loss and learns the phantom anatomy") {
  auto train_set = phantom_slices(Vendor::A, 3);
  auto val_set = phantom_slices(Vendor::B, 1, 32, 1);
  auto net = build_network(tiny_net(), 7);

  TrainConfig tc;
  tc.epochs = 24;
  tc.eval_every = 4;
  tc.learning_rate = 0.005;
  tc.seed = 5;
  TrainResult res = train(net, train_set, val_set, tc);

  REQUIRE(res.metrics.size() == 24);
  CHECK(res.final_train_loss < res.metrics.front().train_loss * 0.5);
  CHECK(res.best_val_dice > 0.5);
  for (const auto& m : res.metrics) CHECK(std::isfinite(m.train_loss));
  // eval cadence: every 4th epoch carries validation numbers
  CHECK(!res.metrics[0].val_dice.has_value());
  CHECK(res.metrics[3].val_dice.has_value());
  CHECK(res.metrics[23].val_dice.has_value());

  // the returned best snapshot scores what it claims
  DiceReport again = evaluate(res.best, val_set);
  CHECK(again.average == doctest::Approx(res.best_val_dice).epsilon(1e-9));
}

TEST_CASE("training is deterministic in the seed") {
  auto train_set = phantom_slices(Vendor::A, 2);
  auto val_set = phantom_slices(Vendor::B, 1, 32, 2);
  TrainConfig tc;
  tc.epochs = 2;
  tc.eval_every = 2;
  tc.seed = 9;

  auto run = [&]() {
    auto net = build_network(tiny_net(), 3);
    TrainResult r = train(net, train_set, val_set, tc);
    return std::pair{r.final_train_loss, net.named_parameters()[0].value.data()};
  };
  auto [loss1, w1] = run();
  auto [loss2, w2] = run();
  CHECK(loss1 == loss2);
  CHECK(w1 == w2);

  tc.seed = 10;
  auto [loss3, w3] = run();
  CHECK(w1 != w3);
}

TEST_CASE("train rejects unlabeled samples and empty sets") {
  auto net = build_network(tiny_net(), 1);
  auto good = phantom_slices(Vendor::A, 1);
  auto bad = good;
  bad[0].mask.reset();
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS((void)train(net, bad, good, tc), std::invalid_argument);
  CHECK_THROWS_AS((void)train(net, {}, good, tc), std::invalid_argument);
}

TEST_CASE("predict shapes, probability maps, and determinism") {
  auto samples = phantom_slices(Vendor::A, 1);
  auto net = build_network(tiny_net(), 21);
  Prediction p = predict(net, samples, 2);
  REQUIRE(p.masks.size() == samples.size());
  REQUIRE(p.probability_maps.size() == samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    CHECK(p.masks[i].height == 32);
    CHECK(p.masks[i].width == 32);
    const Tensor& prob = p.probability_maps[i];
    CHECK(prob.shape() == Shape{4, 32, 32});
    for (int px = 0; px < 32 * 32; ++px) {
      double sum = 0;
      int arg = 0;
      double best = -1;
      for (int c = 0; c < 4; ++c) {
        const double v = prob.data()[static_cast<size_t>(c * 32 * 32 + px)];
        sum += v;
        if (v > best) { best = v; arg = c; }
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
      CHECK(p.masks[i].values[static_cast<size_t>(px)] == arg);
    }
  }
  // batch size must not change results
  Prediction q = predict(net, samples, 5);
  for (size_t i = 0; i < samples.size(); ++i) CHECK(p.masks[i].values == q.masks[i].values);
}

TEST_CASE("evaluate has no side effects on the network") {
  auto samples = phantom_slices(Vendor::B, 1);
  auto net = build_network(tiny_net(), 33);
  const auto before = net.named_parameters()[0].value.data();
  (void)evaluate(net, samples);
  CHECK(net.named_parameters()[0].value.data() == before);
  auto unlabeled = samples;
  unlabeled[0].mask.reset();
  CHECK_THROWS_AS((void)evaluate(net, unlabeled), std::invalid_argument);
}
