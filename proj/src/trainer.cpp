#include "cardseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fmt/format.h>

#include "cardseg/rng.hpp"

namespace cardseg {

std::string loss_name(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "cross_entropy";
    case LossKind::kDice: return "dice";
    case LossKind::kSumOfBoth: return "sum_of_both";
  }
  return "?";
}

LossKind loss_from_name(const std::string& s) {
  if (s == "cross_entropy" || s == "ce") return LossKind::kCrossEntropy;
  if (s == "dice") return LossKind::kDice;
  if (s == "sum_of_both" || s == "both") return LossKind::kSumOfBoth;
  throw std::invalid_argument(fmt::format("unknown loss '{}'", s));
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("TrainConfig.learning_rate must be > 0");
  if (epochs < 1) throw std::invalid_argument("TrainConfig.epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig.batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("TrainConfig.eval_every must be >= 1");
}

namespace {

Tensor to_batch(const std::vector<const SliceSample*>& samples) {
  const int B = static_cast<int>(samples.size());
  const int H = samples[0]->image.height, W = samples[0]->image.width;
  Tensor batch(Shape{B, 1, H, W});
  for (int b = 0; b < B; ++b) {
    const auto& img = samples[static_cast<size_t>(b)]->image;
    if (img.height != H || img.width != W)
      throw ShapeError("batch contains samples of differing shapes");
    std::copy(img.pixels.begin(), img.pixels.end(),
              batch.data().begin() + static_cast<int64_t>(b) * H * W);
  }
  return batch;
}

Tensor compute_loss(Tape* tape, const Tensor& logits,
                    const std::vector<LabelMask>& masks, LossKind kind, int num_classes) {
  switch (kind) {
    case LossKind::kCrossEntropy:
      return categorical_cross_entropy(tape, logits, masks);
    case LossKind::kDice:
      return soft_dice_loss(tape, softmax_channels(tape, logits), one_hot(masks, num_classes));
    case LossKind::kSumOfBoth:
      return add(tape, categorical_cross_entropy(tape, logits, masks),
                 soft_dice_loss(tape, softmax_channels(tape, logits),
                                one_hot(masks, num_classes)));
  }
  throw std::logic_error("unreachable loss kind");
}

}  // namespace

TrainResult train(NetworkInstance& net, const std::vector<SliceSample>& train_set,
                  const std::vector<SliceSample>& val_set, const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto& s : train_set)
    if (!s.mask)
      throw std::invalid_argument(fmt::format("train: sample {} has no mask", s.id()));

  const int num_classes = net.config().num_classes;
  auto params = net.parameters();

  TrainResult result;
  result.best = net.clone();
  result.best_val_dice = -1.0;

  std::vector<size_t> order(train_set.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng shuffle_rng(hash_combine(config.seed, static_cast<uint64_t>(epoch) | (1ull << 40)));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int batches = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
      std::vector<SliceSample> augmented;
      augmented.reserve(end - start);
      for (size_t k = start; k < end; ++k)
        augmented.push_back(apply_policy(train_set[order[k]], config.augmentation, epoch));

      std::vector<const SliceSample*> ptrs;
      std::vector<LabelMask> masks;
      for (const auto& s : augmented) {
        ptrs.push_back(&s);
        masks.push_back(*s.mask);
      }

      Tape tape;
      const Tensor logits = net.forward(&tape, to_batch(ptrs));
      const Tensor loss = compute_loss(&tape, logits, masks, config.loss, num_classes);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw std::runtime_error(fmt::format(
            "train: non-finite loss {} at epoch {} batch {}", loss_value, epoch, batches));
      tape.backward(loss);
      adam_step(params, config.learning_rate);
      loss_sum += loss_value;
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / batches;
    const bool eval_now =
        !val_set.empty() && ((epoch + 1) % config.eval_every == 0 || epoch + 1 == config.epochs);
    if (eval_now) {
      m.val_dice = evaluate(net, val_set);
      if (m.val_dice->average > result.best_val_dice) {
        result.best_val_dice = m.val_dice->average;
        result.best = net.clone();
      }
    }
    m.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.final_train_loss = m.train_loss;
    result.metrics.push_back(std::move(m));
  }
  if (result.best_val_dice < 0.0) result.best = net.clone();  // no validation set
  return result;
}

Prediction predict(const NetworkInstance& net, const std::vector<SliceSample>& samples,
                   int batch_size) {
  Prediction out;
  const int C = net.config().num_classes;
  for (size_t start = 0; start < samples.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(samples.size(), start + static_cast<size_t>(batch_size));
    std::vector<const SliceSample*> ptrs;
    for (size_t k = start; k < end; ++k) ptrs.push_back(&samples[k]);
    const Tensor probs = softmax_channels(nullptr, net.forward(nullptr, to_batch(ptrs)));
    const int H = probs.dim(2), W = probs.dim(3);
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (size_t b = 0; b < ptrs.size(); ++b) {
      Tensor map(Shape{C, H, W});
      std::copy_n(probs.data().data() + static_cast<int64_t>(b) * C * plane, C * plane,
                  map.data().begin());
      LabelMask mask(H, W);
      for (int64_t p = 0; p < plane; ++p) {
        int best = 0;
        double best_v = map.data()[static_cast<size_t>(p)];
        for (int c = 1; c < C; ++c) {
          const double v = map.data()[static_cast<size_t>(c * plane + p)];
          if (v > best_v) { best_v = v; best = c; }
        }
        mask.values[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
      }
      out.masks.push_back(std::move(mask));
      out.probability_maps.push_back(std::move(map));
    }
  }
  return out;
}

DiceReport evaluate(const NetworkInstance& net, const std::vector<SliceSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample list");
  std::vector<LabelMask> truths;
  for (const auto& s : samples) {
    if (!s.mask)
      throw std::invalid_argument(fmt::format("evaluate: sample {} has no mask", s.id()));
    truths.push_back(*s.mask);
  }
  const Prediction pred = predict(net, samples);
  return evaluate_set(pred.masks, truths, net.config().num_classes);
}

}  // namespace cardseg
