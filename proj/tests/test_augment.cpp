#include "cardseg/augment.hpp"

#include <algorithm>
#include <cmath>

#include "cardseg/rng.hpp"
#include "doctest.h"

using namespace cardseg;

namespace {

Image random_image(uint64_t seed, int h = 32, int w = 32) {
  Image img(h, w);
  Rng rng(seed);
  for (auto& p : img.pixels) p = rng.uniform(0.0, 1.0);
  return img;
}

// Independent oracle: empirical CDF evaluated at the bin edges.
double ks_distance(const Image& a, const Image& b, int bins = 256) {
  auto cdf = [&](const Image& img, double x) {
    int64_t n = 0;
    for (double p : img.pixels)
      if (p <= x) ++n;
    return static_cast<double>(n) / static_cast<double>(img.pixels.size());
  };
  double worst = 0.0;
  for (int k = 1; k <= bins; ++k) {
    const double x = static_cast<double>(k) / bins;
    worst = std::max(worst, std::abs(cdf(a, x) - cdf(b, x)));
  }
  return worst;
}

}  // namespace

TEST_CASE("compute_histogram bins and cdf") {
  Image img(1, 4);
  img.pixels = {0.0, 0.1, 0.5, 1.0};
  auto h = compute_histogram(img, 4);
  CHECK(h.counts == std::vector<int64_t>{2, 0, 1, 1});  // 1.0 lands in the last bin
  CHECK(h.pixel_count() == 4);
  CHECK(h.cdf.back() == 1.0);
  CHECK(std::is_sorted(h.cdf.begin(), h.cdf.end()));
  CHECK_THROWS_AS((void)compute_histogram(img, 0), std::invalid_argument);
  Image bad(1, 1);
  bad.pixels = {1.5};
  CHECK_THROWS_AS((void)compute_histogram(bad), std::invalid_argument);
}

TEST_CASE("histogram match closes the KS gap between different distributions") {
  Image src = random_image(1);
  // reference with a very different (squared -> dark-heavy) distribution
  Image ref = random_image(2, 64, 64);
  for (auto& p : ref.pixels) p = p * p;
  auto ref_hist = compute_histogram(ref);
  CHECK(ks_distance(src, ref) > 0.1);

  Image matched = histogram_match(src, ref_hist);
  for (double p : matched.pixels) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
  const double bound = 2.0 / 256 + 1.0 / (64.0 * 64.0);
  CHECK(ks_distance(matched, ref) <= bound);
}

TEST_CASE("histogram match to itself is near-identity") {
  Image img = random_image(3, 64, 64);
  Image matched = histogram_match(img, compute_histogram(img));
  CHECK(ks_distance(matched, img) <= 1.0 / 256);
}

TEST_CASE("histogram match map is monotone non-decreasing") {
  for (uint64_t seed = 10; seed < 40; ++seed) {
    Image src = random_image(seed);
    Image ref = random_image(seed + 1000);
    for (auto& p : ref.pixels) p = std::sqrt(p);
    auto map = histogram_match_map(compute_histogram(src), compute_histogram(ref));
    CHECK(std::is_sorted(map.begin(), map.end()));
  }
}

TEST_CASE("rotate by 0 and 360 is identity-like; mask stays integer") {
  Image img = random_image(4, 16, 16);
  LabelMask m(16, 16);
  for (int i = 5; i < 10; ++i)
    for (int j = 5; j < 10; ++j) m.at(i, j) = 2;

  auto [r0, m0] = rotate(img, m, 0.0);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    CHECK(r0.pixels[i] == doctest::Approx(img.pixels[i]).epsilon(1e-9));
  CHECK(m0->values == m.values);

  auto [r90, m90] = rotate(img, m, 90.0);
  auto [rback, mback] = rotate(r90, m90, -90.0);
  // interior survives a there-and-back rotation; corners may be zero-filled
  CHECK(std::abs(rback.at(8, 8) - img.at(8, 8)) < 1e-6);
  CHECK(mback->at(7, 7) == m.at(7, 7));
  for (uint8_t v : m90->values) CHECK((v == 0 || v == 2));
}

TEST_CASE("rotation roughly preserves foreground area") {
  LabelMask m(32, 32);
  int64_t before = 0;
  for (int i = 10; i < 22; ++i)
    for (int j = 10; j < 22; ++j) { m.at(i, j) = 1; ++before; }
  auto [img, rm] = rotate(random_image(5), m, 37.0);
  int64_t after = 0;
  for (uint8_t v : rm->values)
    if (v == 1) ++after;
  CHECK(std::abs(after - before) <= before / 10);
}

TEST_CASE("hflip is an involution and mirrors columns") {
  Image img = random_image(6, 8, 8);
  LabelMask m(8, 8);
  m.at(0, 1) = 3;
  auto [f, fm] = hflip(img, m);
  CHECK(f.at(0, 0) == img.at(0, 7));
  CHECK(fm->at(0, 6) == 3);
  auto [ff, ffm] = hflip(f, fm);
  CHECK(ff.pixels == img.pixels);
  CHECK(ffm->values == m.values);
}

TEST_CASE("sharpen is identity on constants, clamps, and raises edge contrast") {
  Image flat(8, 8);
  for (auto& p : flat.pixels) p = 0.5;
  Image s = sharpen(flat);
  for (double p : s.pixels) CHECK(p == doctest::Approx(0.5).epsilon(1e-12));

  Image step(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 4; j < 8; ++j) step.at(i, j) = 1.0;
  Image sh = sharpen(step);
  double contrast_before = step.at(0, 4) - step.at(0, 3);
  double contrast_after = sh.at(0, 4) - sh.at(0, 3);
  CHECK(contrast_after >= contrast_before);
  for (double p : sh.pixels) {
    CHECK(p >= 0.0);
    CHECK(p <= 1.0);
  }
}

TEST_CASE("apply_policy is deterministic per draw and varies across draws") {
  SliceSample s;
  s.patient_id = "A001";
  s.phase = Phase::ED;
  s.z_index = 1;
  s.image = random_image(7, 32, 32);
  LabelMask m(32, 32);
  for (int i = 12; i < 20; ++i)
    for (int j = 12; j < 20; ++j) m.at(i, j) = 1;
  s.mask = m;

  AugmentationPolicy policy;
  policy.seed = 99;
  policy.sharpen = true;
  policy.validate();

  SliceSample a = apply_policy(s, policy, 0);
  SliceSample b = apply_policy(s, policy, 0);
  CHECK(a.image.pixels == b.image.pixels);
  CHECK(a.mask->values == b.mask->values);

  bool any_draw_differs = false;
  for (int64_t d = 1; d <= 4; ++d)
    if (apply_policy(s, policy, d).image.pixels != a.image.pixels) any_draw_differs = true;
  CHECK(any_draw_differs);

  // a different sample identity draws differently too
  SliceSample other = s;
  other.z_index = 2;
  CHECK(apply_policy(other, policy, 0).image.pixels != a.image.pixels);

  // neutral policy is a no-op
  SliceSample n = apply_policy(s, AugmentationPolicy::neutral(), 0);
  CHECK(n.image.pixels == s.image.pixels);
  CHECK(n.mask->values == s.mask->values);
}

TEST_CASE("apply_policy histogram matching uses the reference pool") {
  SliceSample s;
  s.patient_id = "B005";
  s.image = random_image(8, 64, 64);

  AugmentationPolicy policy = AugmentationPolicy::neutral(1);
  policy.histogram_match = HistogramMatchMode::kToReferencePool;
  CHECK_THROWS_AS(policy.validate(), std::invalid_argument);  // pool required

  auto pool = std::make_shared<std::vector<Image>>();
  Image ref = random_image(9, 64, 64);
  for (auto& p : ref.pixels) p = p * p;
  pool->push_back(ref);
  policy.reference_pool = pool;
  policy.histogram_match_probability = 1.0;
  policy.validate();

  SliceSample out = apply_policy(s, policy, 0);
  CHECK(ks_distance(out.image, ref) < ks_distance(s.image, ref));
}

TEST_CASE("policy validation rejects bad parameters") {
  AugmentationPolicy p;
  p.hflip_probability = 1.5;
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
  p = AugmentationPolicy{};
  p.rotation_ranges = {{30.0, -30.0}};
  CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}
