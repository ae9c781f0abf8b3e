#pragma once

#include <optional>

#include "cardseg/augment.hpp"
#include "cardseg/network.hpp"

namespace cardseg {

enum class LossKind { kCrossEntropy, kDice, kSumOfBoth };

std::string loss_name(LossKind k);
LossKind loss_from_name(const std::string& s);

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 30;
  int batch_size = 8;
  LossKind loss = LossKind::kSumOfBoth;
  uint64_t seed = 0;
  AugmentationPolicy augmentation = AugmentationPolicy::neutral();
  int eval_every = 5;

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<DiceReport> val_dice;  // present on eval epochs
  double wall_seconds = 0.0;
};

struct TrainResult {
  NetworkInstance best;          // checkpoint with best validation average dice
  std::vector<EpochMetrics> metrics;
  double best_val_dice = 0.0;
  double final_train_loss = 0.0;
};

/// Mini-batch Adam training with per-epoch seeded shuffling and online
/// augmentation. All samples in `train_set` must carry masks. `net` holds
/// the final-epoch weights afterwards; the best-validation snapshot is
/// returned in the result.
TrainResult train(NetworkInstance& net, const std::vector<SliceSample>& train_set,
                  const std::vector<SliceSample>& val_set, const TrainConfig& config);

struct Prediction {
  std::vector<LabelMask> masks;
  std::vector<Tensor> probability_maps;  // [C,H,W] per sample, softmax output
};

/// Per-pixel argmax over softmax channels, ties broken toward the lower
/// class index.
Prediction predict(const NetworkInstance& net, const std::vector<SliceSample>& samples,
                   int batch_size = 8);

/// predict + evaluate_set; every sample must carry a mask.
DiceReport evaluate(const NetworkInstance& net, const std::vector<SliceSample>& samples);

}  // namespace cardseg
