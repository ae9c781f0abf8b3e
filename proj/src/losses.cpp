#include "cardseg/losses.hpp"

#include <cmath>
#include <fmt/format.h>
#include <sstream>

namespace cardseg {

std::string DiceReport::to_text() const {
  std::ostringstream os;
  for (const auto& [cls, d] : per_class) os << fmt::format("class {}: {:.4f}\n", cls, d);
  os << fmt::format("average: {:.4f}\n", average);
  return os.str();
}

std::string DiceReport::to_csv_rows(const std::string& scenario,
                                    const std::string& split) const {
  std::ostringstream os;
  for (const auto& [cls, d] : per_class)
    os << fmt::format("{},{},{},{:.6f}\n", scenario, split, cls, d);
  os << fmt::format("{},{},average,{:.6f}\n", scenario, split, average);
  return os.str();
}

double dice_coefficient(const LabelMask& a, const LabelMask& b, int class_id) {
  if (!a.same_shape(b))
    throw ShapeError(fmt::format("dice_coefficient shape mismatch: {}x{} vs {}x{}",
                                 a.height, a.width, b.height, b.width));
  int64_t na = 0, nb = 0, inter = 0;
  for (size_t i = 0; i < a.values.size(); ++i) {
    const bool ia = a.values[i] == class_id;
    const bool ib = b.values[i] == class_id;
    na += ia; nb += ib; inter += (ia && ib);
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

Tensor one_hot(const std::vector<LabelMask>& masks, int num_classes) {
  if (masks.empty()) throw std::invalid_argument("one_hot: empty mask list");
  const int B = static_cast<int>(masks.size());
  const int H = masks[0].height, W = masks[0].width;
  const int64_t plane = static_cast<int64_t>(H) * W;
  Tensor t(Shape{B, num_classes, H, W});
  for (int b = 0; b < B; ++b) {
    if (masks[static_cast<size_t>(b)].height != H || masks[static_cast<size_t>(b)].width != W)
      throw ShapeError("one_hot: masks differ in shape");
    double* base = t.data().data() + static_cast<int64_t>(b) * num_classes * plane;
    for (int64_t p = 0; p < plane; ++p) {
      const int v = masks[static_cast<size_t>(b)].values[static_cast<size_t>(p)];
      if (v >= num_classes)
        throw std::invalid_argument(fmt::format(
            "one_hot: label {} out of range at sample {} pixel ({},{})", v, b,
            p / W, p % W));
      base[static_cast<int64_t>(v) * plane + p] = 1.0;
    }
  }
  return t;
}

Tensor soft_dice_loss(Tape* tape, const Tensor& probs, const Tensor& target_onehot,
                      double epsilon) {
  if (probs.shape() != target_onehot.shape())
    throw ShapeError(fmt::format("soft_dice_loss shape mismatch: {} vs {}",
                                 shape_str(probs.shape()), shape_str(target_onehot.shape())));
  const int B = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;

  // reject inputs that are not channel-normalized
  for (int b = 0; b < B; ++b) {
    const double* pb = probs.data().data() + static_cast<int64_t>(b) * C * plane;
    for (int64_t p = 0; p < plane; ++p) {
      double s = 0.0;
      for (int c = 0; c < C; ++c) s += pb[c * plane + p];
      if (std::abs(s - 1.0) > 1e-6)
        throw std::invalid_argument(fmt::format(
            "soft_dice_loss: channel sum {} at sample {} pixel ({},{}) is not 1",
            s, b, p / W, p % W));
    }
  }

  const int nterms = B * (C - 1);
  auto nums = std::make_shared<std::vector<double>>(static_cast<size_t>(nterms));
  auto dens = std::make_shared<std::vector<double>>(static_cast<size_t>(nterms));
  double loss_sum = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* pb = probs.data().data() + static_cast<int64_t>(b) * C * plane;
    const double* tb = target_onehot.data().data() + static_cast<int64_t>(b) * C * plane;
    for (int c = 1; c < C; ++c) {
      double inter = 0.0, sp = 0.0, st = 0.0;
      for (int64_t p = 0; p < plane; ++p) {
        inter += pb[c * plane + p] * tb[c * plane + p];
        sp += pb[c * plane + p];
        st += tb[c * plane + p];
      }
      const double num = 2.0 * inter + epsilon;
      const double den = sp + st + epsilon;
      (*nums)[static_cast<size_t>(b * (C - 1) + c - 1)] = num;
      (*dens)[static_cast<size_t>(b * (C - 1) + c - 1)] = den;
      loss_sum += 1.0 - num / den;
    }
  }
  Tensor out = Tensor::scalar(loss_sum / nterms, probs.requires_grad());

  if (tape) {
    auto pi = probs.impl(); auto ti = target_onehot.impl(); auto oi = out.impl();
    tape->record(out, [pi, ti, oi, nums, dens, B, C, plane, nterms] {
      pi->ensure_grad();
      const double g = oi->grad[0] / nterms;
      for (int b = 0; b < B; ++b) {
        const double* tb = ti->data.data() + static_cast<int64_t>(b) * C * plane;
        double* dp = pi->grad.data() + static_cast<int64_t>(b) * C * plane;
        for (int c = 1; c < C; ++c) {
          const double num = (*nums)[static_cast<size_t>(b * (C - 1) + c - 1)];
          const double den = (*dens)[static_cast<size_t>(b * (C - 1) + c - 1)];
          // d(1 - num/den)/dp = -(2t·den - num)/den^2
          for (int64_t p = 0; p < plane; ++p)
            dp[c * plane + p] -= g * (2.0 * tb[c * plane + p] * den - num) / (den * den);
        }
      }
    });
  }
  return out;
}

Tensor categorical_cross_entropy(Tape* tape, const Tensor& logits,
                                 const std::vector<LabelMask>& targets) {
  const int B = logits.dim(0), C = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  if (static_cast<int>(targets.size()) != B)
    throw ShapeError(fmt::format("cross_entropy: {} targets for batch of {}",
                                 targets.size(), B));
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int b = 0; b < B; ++b) {
    const auto& m = targets[static_cast<size_t>(b)];
    if (m.height != H || m.width != W)
      throw ShapeError("cross_entropy: mask/logits spatial mismatch");
    for (int64_t p = 0; p < plane; ++p)
      if (m.values[static_cast<size_t>(p)] >= C)
        throw std::invalid_argument(fmt::format(
            "cross_entropy: label {} out of range at sample {} pixel ({},{})",
            m.values[static_cast<size_t>(p)], b, p / W, p % W));
  }

  // cache log-softmax for the backward rule
  auto logp = std::make_shared<std::vector<double>>(logits.data().size());
  double loss_sum = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* xb = logits.data().data() + static_cast<int64_t>(b) * C * plane;
    double* lb = logp->data() + static_cast<int64_t>(b) * C * plane;
    const auto& m = targets[static_cast<size_t>(b)];
    for (int64_t p = 0; p < plane; ++p) {
      double mx = xb[p];
      for (int c = 1; c < C; ++c) mx = std::max(mx, xb[c * plane + p]);
      double z = 0.0;
      for (int c = 0; c < C; ++c) z += std::exp(xb[c * plane + p] - mx);
      const double lse = mx + std::log(z);
      for (int c = 0; c < C; ++c) lb[c * plane + p] = xb[c * plane + p] - lse;
      loss_sum -= lb[static_cast<int64_t>(m.values[static_cast<size_t>(p)]) * plane + p];
    }
  }
  const int64_t npix = static_cast<int64_t>(B) * plane;
  Tensor out = Tensor::scalar(loss_sum / static_cast<double>(npix), logits.requires_grad());

  if (tape) {
    auto xi = logits.impl(); auto oi = out.impl();
    auto tgt = std::make_shared<std::vector<LabelMask>>(targets);
    tape->record(out, [xi, oi, logp, tgt, B, C, plane, npix] {
      xi->ensure_grad();
      const double g = oi->grad[0] / static_cast<double>(npix);
      for (int b = 0; b < B; ++b) {
        const double* lb = logp->data() + static_cast<int64_t>(b) * C * plane;
        double* dx = xi->grad.data() + static_cast<int64_t>(b) * C * plane;
        const auto& m = (*tgt)[static_cast<size_t>(b)];
        for (int64_t p = 0; p < plane; ++p) {
          const int t = m.values[static_cast<size_t>(p)];
          for (int c = 0; c < C; ++c) {
            const double soft = std::exp(lb[c * plane + p]);
            dx[c * plane + p] += g * (soft - (c == t ? 1.0 : 0.0));
          }
        }
      }
    });
  }
  return out;
}

DiceReport evaluate_set(const std::vector<LabelMask>& predictions,
                        const std::vector<LabelMask>& truths, int num_classes) {
  if (predictions.empty() || truths.empty())
    throw std::invalid_argument("evaluate_set: empty input lists");
  if (predictions.size() != truths.size())
    throw std::invalid_argument(fmt::format("evaluate_set: {} predictions vs {} truths",
                                            predictions.size(), truths.size()));
  DiceReport report;
  std::map<int, std::pair<double, int>> acc;  // class -> (sum, count)
  for (size_t i = 0; i < truths.size(); ++i) {
    for (int cls = 1; cls < num_classes; ++cls) {
      bool present = false;
      for (uint8_t v : truths[i].values)
        if (v == cls) { present = true; break; }
      if (!present) continue;
      acc[cls].first += dice_coefficient(predictions[i], truths[i], cls);
      acc[cls].second += 1;
    }
  }
  double total = 0.0;
  for (const auto& [cls, sc] : acc) {
    report.per_class[cls] = sc.first / sc.second;
    total += report.per_class[cls];
  }
  report.average = acc.empty() ? 0.0 : total / static_cast<double>(acc.size());
  return report;
}

}  // namespace cardseg
