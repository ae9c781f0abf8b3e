#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cardseg/tensor.hpp"

namespace cardseg {

/// Integer segmentation mask, values in {0..num_classes-1}.
/// Class meanings: 0 background, 1 LV, 2 MYO, 3 RV.
struct LabelMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> values;

  LabelMask() = default;
  LabelMask(int h, int w) : height(h), width(w), values(static_cast<size_t>(h) * w, 0) {}

  uint8_t at(int i, int j) const { return values[static_cast<size_t>(i) * width + j]; }
  uint8_t& at(int i, int j) { return values[static_cast<size_t>(i) * width + j]; }
  bool same_shape(const LabelMask& o) const { return height == o.height && width == o.width; }
};

struct DiceReport {
  std::map<int, double> per_class;  // foreground classes present in truth
  double average = 0.0;

  std::string to_text() const;
  /// One CSV row per class: scenario,split,class,dice
  std::string to_csv_rows(const std::string& scenario, const std::string& split) const;
};

/// 2|A∩B| / (|A|+|B|) over the pixel sets of `class_id`; 1.0 when both
/// masks lack the class entirely.
double dice_coefficient(const LabelMask& a, const LabelMask& b, int class_id);

/// Soft dice over foreground classes (1..C-1), 1 - mean of the smoothed
/// per-class overlap ratio. `probs` must come from softmax_channels;
/// `target_onehot` is the one-hot encoding of the label masks.
Tensor soft_dice_loss(Tape* tape, const Tensor& probs, const Tensor& target_onehot,
                      double epsilon = 1e-5);

/// Mean pixel-wise -log softmax(logits)[target], computed via log-sum-exp.
Tensor categorical_cross_entropy(Tape* tape, const Tensor& logits,
                                 const std::vector<LabelMask>& targets);

/// One-hot encode masks to [B,C,H,W].
Tensor one_hot(const std::vector<LabelMask>& masks, int num_classes);

/// Per-class dice averaged over the samples whose truth contains the class.
DiceReport evaluate_set(const std::vector<LabelMask>& predictions,
                        const std::vector<LabelMask>& truths, int num_classes = 4);

}  // namespace cardseg
