#include "cardseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "cardseg/rng.hpp"

namespace cardseg {

int64_t IntensityHistogram::pixel_count() const {
  int64_t n = 0;
  for (int64_t c : counts) n += c;
  return n;
}

IntensityHistogram compute_histogram(const Image& image, int bin_count) {
  if (image.pixels.empty()) throw std::invalid_argument("compute_histogram: empty image");
  if (bin_count < 1) throw std::invalid_argument("compute_histogram: bin_count must be >= 1");
  IntensityHistogram h;
  h.bin_count = bin_count;
  h.counts.assign(static_cast<size_t>(bin_count), 0);
  for (double v : image.pixels) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(
          fmt::format("compute_histogram: pixel {} outside [0,1]", v));
    int bin = static_cast<int>(std::floor(v * bin_count));
    bin = std::clamp(bin, 0, bin_count - 1);  // value 1.0 lands in the last bin
    ++h.counts[static_cast<size_t>(bin)];
  }
  h.cdf.assign(static_cast<size_t>(bin_count), 0.0);
  const double total = static_cast<double>(image.pixels.size());
  int64_t run = 0;
  for (int k = 0; k < bin_count; ++k) {
    run += h.counts[static_cast<size_t>(k)];
    h.cdf[static_cast<size_t>(k)] = static_cast<double>(run) / total;
  }
  return h;
}

std::vector<double> histogram_match_map(const IntensityHistogram& source,
                                        const IntensityHistogram& reference) {
  if (source.bin_count != reference.bin_count)
    throw std::invalid_argument(fmt::format("histogram bin counts differ: {} vs {}",
                                            source.bin_count, reference.bin_count));
  const int bins = source.bin_count;
  auto center = [bins](int j) { return (static_cast<double>(j) + 0.5) / bins; };

  std::vector<double> map(static_cast<size_t>(bins));
  int j = 0;
  for (int k = 0; k < bins; ++k) {
    const double q = source.cdf[static_cast<size_t>(k)];
    while (j < bins - 1 && reference.cdf[static_cast<size_t>(j)] < q) ++j;
    const double cj = reference.cdf[static_cast<size_t>(j)];
    if (j == 0) {
      map[static_cast<size_t>(k)] = center(0);
    } else {
      const double cprev = reference.cdf[static_cast<size_t>(j - 1)];
      const double t = (cj > cprev) ? std::clamp((q - cprev) / (cj - cprev), 0.0, 1.0) : 1.0;
      map[static_cast<size_t>(k)] = center(j - 1) + t * (center(j) - center(j - 1));
    }
  }
  // guard against numeric non-monotonicity in the interpolation
  for (int k = 1; k < bins; ++k)
    map[static_cast<size_t>(k)] =
        std::max(map[static_cast<size_t>(k)], map[static_cast<size_t>(k - 1)]);
  return map;
}

Image histogram_match(const Image& source, const IntensityHistogram& reference) {
  const IntensityHistogram src_hist = compute_histogram(source, reference.bin_count);
  const std::vector<double> map = histogram_match_map(src_hist, reference);
  Image out(source.height, source.width);
  for (size_t i = 0; i < source.pixels.size(); ++i) {
    int bin = static_cast<int>(std::floor(source.pixels[i] * reference.bin_count));
    bin = std::clamp(bin, 0, reference.bin_count - 1);
    out.pixels[i] = map[static_cast<size_t>(bin)];
  }
  return out;
}

std::pair<Image, std::optional<LabelMask>> rotate(
    const Image& image, const std::optional<LabelMask>& mask, double angle_degrees) {
  if (!std::isfinite(angle_degrees))
    throw std::invalid_argument("rotate: angle must be finite");
  const int H = image.height, W = image.width;
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  const double rad = angle_degrees * M_PI / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);

  Image out(H, W);
  std::optional<LabelMask> mout;
  if (mask) mout = LabelMask(H, W);

  for (int i = 0; i < H; ++i) {
    for (int j = 0; j < W; ++j) {
      // inverse mapping: rotate the output coordinate back by -angle
      const double dy = i - cy, dx = j - cx;
      const double si = cy + c * dy + s * dx;
      const double sj = cx - s * dy + c * dx;

      const int i0 = static_cast<int>(std::floor(si));
      const int j0 = static_cast<int>(std::floor(sj));
      const double fy = si - i0, fx = sj - j0;
      auto pix = [&](int y, int x) {
        return (y >= 0 && y < H && x >= 0 && x < W) ? image.at(y, x) : 0.0;
      };
      out.at(i, j) = (1 - fy) * ((1 - fx) * pix(i0, j0) + fx * pix(i0, j0 + 1)) +
                     fy * ((1 - fx) * pix(i0 + 1, j0) + fx * pix(i0 + 1, j0 + 1));

      if (mout) {
        const int ni = static_cast<int>(std::lround(si));
        const int nj = static_cast<int>(std::lround(sj));
        mout->at(i, j) = (ni >= 0 && ni < H && nj >= 0 && nj < W) ? mask->at(ni, nj) : 0;
      }
    }
  }
  return {std::move(out), std::move(mout)};
}

std::pair<Image, std::optional<LabelMask>> hflip(const Image& image,
                                                 const std::optional<LabelMask>& mask) {
  Image out(image.height, image.width);
  for (int i = 0; i < image.height; ++i)
    for (int j = 0; j < image.width; ++j)
      out.at(i, j) = image.at(i, image.width - 1 - j);
  std::optional<LabelMask> mout;
  if (mask) {
    mout = LabelMask(mask->height, mask->width);
    for (int i = 0; i < mask->height; ++i)
      for (int j = 0; j < mask->width; ++j)
        mout->at(i, j) = mask->at(i, mask->width - 1 - j);
  }
  return {std::move(out), std::move(mout)};
}

namespace {

// 5-tap binomial blur along both axes, edge-replicated.
Image binomial_blur(const Image& image) {
  static constexpr double kKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  const int H = image.height, W = image.width;
  Image tmp(H, W), out(H, W);
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d)
        acc += kKernel[d + 2] * image.at(i, std::clamp(j + d, 0, W - 1));
      tmp.at(i, j) = acc;
    }
  for (int i = 0; i < H; ++i)
    for (int j = 0; j < W; ++j) {
      double acc = 0.0;
      for (int d = -2; d <= 2; ++d)
        acc += kKernel[d + 2] * tmp.at(std::clamp(i + d, 0, H - 1), j);
      out.at(i, j) = acc;
    }
  return out;
}

}  // namespace

Image sharpen(const Image& image, double alpha) {
  const Image blurred = binomial_blur(image);
  Image out(image.height, image.width);
  for (size_t i = 0; i < image.pixels.size(); ++i)
    out.pixels[i] =
        std::clamp(image.pixels[i] + alpha * (image.pixels[i] - blurred.pixels[i]), 0.0, 1.0);
  return out;
}

void AugmentationPolicy::validate() const {
  if (hflip_probability < 0.0 || hflip_probability > 1.0)
    throw std::invalid_argument(fmt::format("hflip_probability {} outside [0,1]",
                                            hflip_probability));
  for (const auto& [lo, hi] : rotation_ranges)
    if (!std::isfinite(lo) || !std::isfinite(hi) || lo > hi)
      throw std::invalid_argument(fmt::format("invalid rotation range [{},{}]", lo, hi));
  if (histogram_match == HistogramMatchMode::kToReferencePool &&
      (!reference_pool || reference_pool->empty()))
    throw std::invalid_argument("histogram matching enabled without a reference pool");
  if (histogram_match_probability < 0.0 || histogram_match_probability > 1.0)
    throw std::invalid_argument(fmt::format("histogram_match_probability {} outside [0,1]",
                                            histogram_match_probability));
}

AugmentationPolicy AugmentationPolicy::neutral(uint64_t seed) {
  AugmentationPolicy p;
  p.rotation_ranges.clear();
  p.hflip_probability = 0.0;
  p.sharpen = false;
  p.histogram_match = HistogramMatchMode::kOff;
  p.seed = seed;
  return p;
}

SliceSample apply_policy(const SliceSample& sample, const AugmentationPolicy& policy,
                         int64_t draw_index) {
  policy.validate();
  uint64_t h = hash_combine(policy.seed, sample.patient_id);
  h = hash_combine(h, static_cast<uint64_t>(sample.phase));
  h = hash_combine(h, static_cast<uint64_t>(sample.z_index));
  h = hash_combine(h, static_cast<uint64_t>(draw_index));
  Rng rng(h);

  SliceSample out = sample;
  if (policy.histogram_match == HistogramMatchMode::kToReferencePool) {
    // Draw the reference index before the probability gate so the sample's
    // remaining draws stay aligned whether or not matching fires.
    const auto& pool = *policy.reference_pool;
    const auto ref_idx =
        static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(pool.size()) - 1));
    if (rng.bernoulli(policy.histogram_match_probability))
      out.image = histogram_match(out.image, compute_histogram(pool[ref_idx]));
  }
  if (!policy.rotation_ranges.empty()) {
    const auto range_idx = static_cast<size_t>(
        rng.uniform_int(0, static_cast<int64_t>(policy.rotation_ranges.size()) - 1));
    const auto& [lo, hi] = policy.rotation_ranges[range_idx];
    const double angle = rng.uniform(lo, hi);
    auto [img, msk] = rotate(out.image, out.mask, angle);
    out.image = std::move(img);
    out.mask = std::move(msk);
  }
  if (rng.bernoulli(policy.hflip_probability)) {
    auto [img, msk] = hflip(out.image, out.mask);
    out.image = std::move(img);
    out.mask = std::move(msk);
  }
  if (policy.sharpen) out.image = sharpen(out.image);
  return out;
}

}  // namespace cardseg
