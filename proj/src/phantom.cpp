#include "cardseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "cardseg/rng.hpp"

namespace cardseg {

PhantomConfig::PhantomConfig() {
  vendor_profiles[Vendor::A] = {{0.10, 0.80, 0.45, 0.62}, 0.03, 1.0, 0.0};
  vendor_profiles[Vendor::B] = {{0.12, 0.75, 0.40, 0.58}, 0.03, 0.9, 0.0};
  // Vendor C pairs an intensity shift (correctable by histogram matching)
  // with a point-spread blur (not correctable by any intensity map).
  vendor_profiles[Vendor::C] = {{0.06, 0.85, 0.30, 0.55}, 0.04, 1.8, 1.6};
}

void PhantomConfig::validate() const {
  if (image_size < 16 || image_size % 8 != 0)
    throw std::invalid_argument(fmt::format(
        "PhantomConfig.image_size {} must be >= 16 and divisible by 8", image_size));
  if (frames < 2) throw std::invalid_argument("PhantomConfig.frames must be >= 2");
  if (slices < 1) throw std::invalid_argument("PhantomConfig.slices must be >= 1");
  for (const auto& [vendor, prof] : vendor_profiles) {
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j)
        if (std::abs(prof.class_means[static_cast<size_t>(i)] -
                     prof.class_means[static_cast<size_t>(j)]) < 3.0 * prof.noise_sigma)
          throw std::invalid_argument(fmt::format(
              "vendor {} class means {} and {} are closer than 3*noise_sigma",
              vendor_name(vendor), i, j));
  }
  const auto& a = vendor_profiles.at(Vendor::A);
  const auto& b = vendor_profiles.at(Vendor::B);
  const auto& c = vendor_profiles.at(Vendor::C);
  auto same = [](const VendorProfile& x, const VendorProfile& y) {
    return x.class_means == y.class_means && x.gamma == y.gamma &&
           x.blur_sigma == y.blur_sigma;
  };
  if (c.blur_sigma < 0.0 || a.blur_sigma < 0.0 || b.blur_sigma < 0.0)
    throw std::invalid_argument("vendor blur_sigma must be >= 0");
  if (same(c, a) || same(c, b))
    throw std::invalid_argument("vendor C profile must differ from A and B (no domain shift)");
}

VolumeRecord generate_patient(const PhantomConfig& config, Vendor vendor,
                              int patient_index) {
  config.validate();
  const VendorProfile& prof = config.vendor_profiles.at(vendor);
  const int N = config.image_size;

  uint64_t h = hash_combine(config.seed, static_cast<uint64_t>(vendor));
  h = hash_combine(h, static_cast<uint64_t>(patient_index));
  Rng rng(h);

  // per-patient anatomy
  const double cy = N / 2.0 + rng.uniform(-config.center_jitter, config.center_jitter);
  const double cx = N / 2.0 + rng.uniform(-config.center_jitter, config.center_jitter);
  const double lv_r = rng.uniform(config.lv_radius_range.first, config.lv_radius_range.second);
  const double myo_t =
      rng.uniform(config.myo_thickness_range.first, config.myo_thickness_range.second);
  const double rv_r = rng.uniform(config.rv_radius_range.first, config.rv_radius_range.second);
  const double rv_angle =
      M_PI + rng.uniform(config.rv_angle_range.first, config.rv_angle_range.second);

  VolumeRecord rec;
  rec.patient_id = fmt::format("{}{:03d}", vendor_name(vendor), patient_index);
  rec.vendor = vendor;
  rec.t = config.frames;
  rec.z = config.slices;
  rec.height = N;
  rec.width = N;
  rec.ed_frame = 0;
  rec.es_frame = config.frames / 2;
  const int64_t total = static_cast<int64_t>(rec.t) * rec.z * N * N;
  rec.voxels.assign(static_cast<size_t>(total), 0.0f);
  rec.labels.assign(static_cast<size_t>(total), 0);

  for (int f = 0; f < rec.t; ++f) {
    // contraction toward mid-cycle mimics ED -> ES -> ED
    const double cycle =
        1.0 - 0.18 * std::sin(M_PI * static_cast<double>(f) / (rec.t - 1));
    for (int zi = 0; zi < rec.z; ++zi) {
      const double apex = 1.0 - 0.07 * zi;  // radii shrink toward the apex
      const double r_lv = lv_r * cycle * apex;
      const double r_out = (lv_r + myo_t) * cycle * apex;
      const double r_rv = rv_r * cycle * apex;
      // RV crescent: a disk next to the myocardium minus an inner disk
      // shifted back toward the LV
      const double rvd = r_out + 0.55 * r_rv;
      const double rv_cy = cy + rvd * std::sin(rv_angle);
      const double rv_cx = cx + rvd * std::cos(rv_angle);
      const double in_cy = cy + (rvd - 0.55 * r_rv) * std::sin(rv_angle);
      const double in_cx = cx + (rvd - 0.55 * r_rv) * std::cos(rv_angle);

      const int64_t off = rec.frame_offset(f, zi);
      std::vector<double> clean(static_cast<size_t>(N) * N, 0.0);
      for (int i = 0; i < N; ++i) {
        for (int j = 0; j < N; ++j) {
          const double dy = i - cy, dx = j - cx;
          const double d2 = dy * dy + dx * dx;
          uint8_t label = 0;
          if (d2 <= r_lv * r_lv) {
            label = 1;  // LV
          } else if (d2 <= r_out * r_out) {
            label = 2;  // MYO
          } else {
            const double ry = i - rv_cy, rx = j - rv_cx;
            const double iy = i - in_cy, ix = j - in_cx;
            if (ry * ry + rx * rx <= r_rv * r_rv &&
                iy * iy + ix * ix > 0.8 * 0.8 * r_rv * r_rv)
              label = 3;  // RV crescent
          }
          const double mean = prof.class_means[label];
          clean[static_cast<size_t>(i) * N + j] = std::pow(mean, prof.gamma);
          rec.labels[static_cast<size_t>(off + static_cast<int64_t>(i) * N + j)] = label;
        }
      }
      // Scanner PSF: separable Gaussian blur of the noiseless plane under
      // edge replication, followed by sensor noise.
      if (prof.blur_sigma > 0.0) {
        const int radius = static_cast<int>(std::ceil(3.0 * prof.blur_sigma));
        std::vector<double> kernel(static_cast<size_t>(2 * radius + 1));
        double norm = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          kernel[static_cast<size_t>(k + radius)] =
              std::exp(-0.5 * (k / prof.blur_sigma) * (k / prof.blur_sigma));
          norm += kernel[static_cast<size_t>(k + radius)];
        }
        for (double& w : kernel) w /= norm;
        std::vector<double> tmp(clean.size());
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
              acc += kernel[static_cast<size_t>(k + radius)] *
                     clean[static_cast<size_t>(i) * N + std::clamp(j + k, 0, N - 1)];
            tmp[static_cast<size_t>(i) * N + j] = acc;
          }
        for (int i = 0; i < N; ++i)
          for (int j = 0; j < N; ++j) {
            double acc = 0.0;
            for (int k = -radius; k <= radius; ++k)
              acc += kernel[static_cast<size_t>(k + radius)] *
                     tmp[static_cast<size_t>(std::clamp(i + k, 0, N - 1)) * N + j];
            clean[static_cast<size_t>(i) * N + j] = acc;
          }
      }
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < N; ++j) {
          const double value = std::clamp(
              clean[static_cast<size_t>(i) * N + j] + rng.normal(0.0, prof.noise_sigma),
              0.0, 1.0);
          rec.voxels[static_cast<size_t>(off + static_cast<int64_t>(i) * N + j)] =
              static_cast<float>(value);
        }
    }
  }
  return rec;
}

namespace {
thread_local int64_t g_audit_reads = 0;
}

const std::vector<uint8_t>& PhantomCohort::audit_mask(const std::string& patient_id) const {
  auto it = audit_masks.find(patient_id);
  if (it == audit_masks.end())
    throw std::invalid_argument(fmt::format("no audit mask for patient '{}'", patient_id));
  ++g_audit_reads;
  return it->second;
}

int64_t PhantomCohort::audit_reads_this_thread() { return g_audit_reads; }

PhantomCohort generate_cohort(const PhantomConfig& config) {
  config.validate();
  PhantomCohort cohort;
  for (Vendor vendor : {Vendor::A, Vendor::B, Vendor::C}) {
    const auto it = config.patients_per_vendor.find(vendor);
    const int n = it == config.patients_per_vendor.end() ? 0 : it->second;
    for (int p = 0; p < n; ++p) {
      VolumeRecord rec = generate_patient(config, vendor, p);
      if (vendor == Vendor::C) {
        cohort.audit_masks[rec.patient_id] = std::move(rec.labels);
        rec.labels.clear();
        cohort.unlabeled.push_back(std::move(rec));
      } else {
        cohort.labeled.push_back(std::move(rec));
      }
    }
  }
  return cohort;
}

}  // namespace cardseg
