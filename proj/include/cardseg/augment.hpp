#pragma once

#include <memory>
#include <optional>
#include <utility>
#include <vector>

#include "cardseg/data.hpp"

namespace cardseg {

/// Binned intensity distribution over [0,1] with its cumulative form.
struct IntensityHistogram {
  int bin_count = 256;
  std::vector<int64_t> counts;
  std::vector<double> cdf;  // non-decreasing, last entry 1.0

  int64_t pixel_count() const;
};

IntensityHistogram compute_histogram(const Image& image, int bin_count = 256);

/// Classic CDF matching: each source intensity s maps to
/// invCDF_ref(CDF_src(s)) with piecewise-linear inverse interpolation.
/// The mapping is monotone non-decreasing and stays inside [0,1].
Image histogram_match(const Image& source, const IntensityHistogram& reference);

/// The per-bin source->intensity mapping used by histogram_match.
std::vector<double> histogram_match_map(const IntensityHistogram& source,
                                        const IntensityHistogram& reference);

/// Rotation about the image center; bilinear with zero fill for the image,
/// nearest-neighbor for the mask so labels are never blended.
std::pair<Image, std::optional<LabelMask>> rotate(
    const Image& image, const std::optional<LabelMask>& mask, double angle_degrees);

std::pair<Image, std::optional<LabelMask>> hflip(const Image& image,
                                                 const std::optional<LabelMask>& mask);

/// Unsharp mask: clamp(image + alpha*(image - blur(image)), 0, 1) with a
/// 5-tap binomial blur applied separably under edge replication.
Image sharpen(const Image& image, double alpha = 1.0);

enum class HistogramMatchMode { kOff, kToReferencePool };

struct AugmentationPolicy {
  std::vector<std::pair<double, double>> rotation_ranges{{-45.0, 45.0}, {-90.0, 90.0}};
  double hflip_probability = 0.5;
  bool sharpen = false;
  HistogramMatchMode histogram_match = HistogramMatchMode::kOff;
  /// Chance that an enabled match actually fires for a given sample, so the
  /// network keeps seeing both the native and the matched intensity domain.
  double histogram_match_probability = 0.5;
  std::shared_ptr<std::vector<Image>> reference_pool;  // vendor-C images
  uint64_t seed = 0;

  void validate() const;
  static AugmentationPolicy neutral(uint64_t seed = 0);
};

/// Deterministic per-sample augmentation: all randomness is derived from
/// (policy.seed, patient_id, phase, z_index, draw_index). Intensity matching
/// runs before the geometric ops; geometric ops hit image and mask alike.
SliceSample apply_policy(const SliceSample& sample, const AugmentationPolicy& policy,
                         int64_t draw_index);

}  // namespace cardseg
