#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cardseg/losses.hpp"

namespace cardseg {

enum class Vendor { A, B, C };
enum class Phase { ED, ES };

std::string vendor_name(Vendor v);
Vendor vendor_from_name(const std::string& s);
std::string phase_name(Phase p);

/// 2D image plane, row-major doubles.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(static_cast<size_t>(h) * w, 0.0) {}
  double at(int i, int j) const { return pixels[static_cast<size_t>(i) * width + j]; }
  double& at(int i, int j) { return pixels[static_cast<size_t>(i) * width + j]; }
};

/// One 4D acquisition: [T, Z, H, W] voxels, labels only at the ED/ES frames.
struct VolumeRecord {
  std::string patient_id;
  Vendor vendor = Vendor::A;
  int t = 0, z = 0, height = 0, width = 0;
  std::pair<double, double> spacing{1.0, 1.0};
  int ed_frame = 0;
  int es_frame = 1;
  std::vector<float> voxels;            // [T,Z,H,W]
  std::vector<uint8_t> labels;          // [T,Z,H,W], empty when unlabeled

  bool has_labels() const { return !labels.empty(); }
  int64_t frame_offset(int frame, int slice) const {
    return ((static_cast<int64_t>(frame) * z) + slice) * height * width;
  }
};

struct SliceSample {
  std::string patient_id;
  Vendor vendor = Vendor::A;
  Phase phase = Phase::ED;
  int z_index = 0;
  Image image;                       // normalized to [0,1]
  std::optional<LabelMask> mask;
  bool pseudo = false;               // mask came from pseudo-labeling

  std::string id() const;
};

struct SplitAssignment {
  std::set<std::string> train, validation, test;
  std::array<double, 3> realized_ratios{0, 0, 0};
};

// --- manifest I/O -----------------------------------------------------------
// Manifest: JSON listing per patient {id, vendor, dims, spacing, ed_frame,
// es_frame, image_blob, label_blob?}. Blobs are raw row-major little-endian
// float32 (images) / uint8 (labels).

std::vector<VolumeRecord> load_manifest(const std::string& path, bool strict = true);
void write_manifest(const std::string& dir, const std::string& manifest_name,
                    const std::vector<VolumeRecord>& records);

// --- preprocessing ----------------------------------------------------------

/// ED and ES slices of a record: 2*Z samples, ordered by (phase, z).
std::vector<SliceSample> extract_ed_es_slices(const VolumeRecord& rec);

/// Window centered at (floor(H/2), floor(W/2)); inputs smaller than the
/// target are zero-padded symmetrically first (extra pixel bottom/right).
Image center_crop(const Image& image, int out_h, int out_w);
LabelMask center_crop(const LabelMask& mask, int out_h, int out_w);

/// Clamp to the [p1, p99] percentiles, then min-max scale to [0,1].
/// A constant image maps to all zeros.
Image normalize_intensity(const Image& image);

/// Percentile by linear interpolation over the sorted values, p in [0,100].
double percentile(std::vector<double> values, double p);

/// Greedy slice-count-weighted assignment of shuffled patients; no patient
/// appears in more than one split.
SplitAssignment patient_aware_split(const std::vector<VolumeRecord>& records,
                                    std::array<double, 3> ratios, uint64_t seed);

/// Stable processing order: (patient_id, phase, z_index).
void sort_samples(std::vector<SliceSample>& samples);

}  // namespace cardseg
