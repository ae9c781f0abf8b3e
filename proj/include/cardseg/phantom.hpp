#pragma once

#include <map>

#include "cardseg/data.hpp"

namespace cardseg {

/// Per-vendor intensity model: class means in [0,1] (bg, LV, MYO, RV),
/// gamma warp, a Gaussian point-spread blur (pixels; a resolution/PSF
/// difference between scanners that no global intensity map can undo),
/// and additive Gaussian noise.
struct VendorProfile {
  std::array<double, 4> class_means{0.10, 0.75, 0.45, 0.60};
  double noise_sigma = 0.03;
  double gamma = 1.0;
  double blur_sigma = 0.0;
};

struct PhantomConfig {
  int image_size = 64;
  std::map<Vendor, int> patients_per_vendor{{Vendor::A, 10}, {Vendor::B, 10}, {Vendor::C, 5}};
  int frames = 4;   // ed_frame 0, es_frame frames/2
  int slices = 3;
  std::map<Vendor, VendorProfile> vendor_profiles;
  double center_jitter = 4.0;        // px, per patient
  std::pair<double, double> lv_radius_range{7.0, 10.0};
  std::pair<double, double> myo_thickness_range{3.0, 5.0};
  std::pair<double, double> rv_radius_range{6.0, 9.0};
  std::pair<double, double> rv_angle_range{-0.6, 0.6};  // radians around "west"
  uint64_t seed = 0;

  PhantomConfig();
  /// Rejects profiles whose class means are closer than 3*noise_sigma or
  /// whose vendor C matches vendor A and B (no domain shift).
  void validate() const;
};

/// One synthetic patient; deterministic in (config, vendor, patient_index).
/// Labels are always generated; visibility is decided by generate_cohort.
VolumeRecord generate_patient(const PhantomConfig& config, Vendor vendor, int patient_index);

/// Labeled A/B records plus vendor-C records whose masks are moved behind
/// the hidden-audit interface of PhantomCohort.
struct PhantomCohort {
  std::vector<VolumeRecord> labeled;    // vendors A and B, labels attached
  std::vector<VolumeRecord> unlabeled;  // vendor C, labels stripped

  /// Hidden ground truth for vendor C, keyed by patient id. Reads are
  /// counted per thread so scenario runs (which are single-threaded) can
  /// assert training never touched them.
  std::map<std::string, std::vector<uint8_t>> audit_masks;

  const std::vector<uint8_t>& audit_mask(const std::string& patient_id) const;
  static int64_t audit_reads_this_thread();
};

PhantomCohort generate_cohort(const PhantomConfig& config);

}  // namespace cardseg
