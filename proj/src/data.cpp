#include "cardseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fmt/format.h>
#include <fstream>

#include "cardseg/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace cardseg {

std::string vendor_name(Vendor v) {
  switch (v) {
    case Vendor::A: return "A";
    case Vendor::B: return "B";
    case Vendor::C: return "C";
  }
  return "?";
}

Vendor vendor_from_name(const std::string& s) {
  if (s == "A") return Vendor::A;
  if (s == "B") return Vendor::B;
  if (s == "C") return Vendor::C;
  throw std::invalid_argument(fmt::format("unknown vendor '{}'", s));
}

std::string phase_name(Phase p) { return p == Phase::ED ? "ED" : "ES"; }

std::string SliceSample::id() const {
  return fmt::format("{}/{}/z{}", patient_id, phase_name(phase), z_index);
}

namespace {

template <typename T>
std::vector<T> read_blob(const fs::path& path, int64_t count) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error(fmt::format("missing blob '{}'", path.string()));
  const auto bytes = static_cast<int64_t>(is.tellg());
  if (bytes != count * static_cast<int64_t>(sizeof(T)))
    throw std::runtime_error(fmt::format(
        "blob '{}' has {} bytes, expected {} for declared dims", path.string(),
        bytes, count * static_cast<int64_t>(sizeof(T))));
  std::vector<T> data(static_cast<size_t>(count));
  is.seekg(0);
  is.read(reinterpret_cast<char*>(data.data()), bytes);
  if (!is) throw std::runtime_error(fmt::format("read failed for '{}'", path.string()));
  return data;
}

template <typename T>
void write_blob(const fs::path& path, const std::vector<T>& data) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error(fmt::format("cannot write blob '{}'", path.string()));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!os) throw std::runtime_error(fmt::format("write failed for '{}'", path.string()));
}

}  // namespace

std::vector<VolumeRecord> load_manifest(const std::string& path, bool strict) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error(fmt::format("manifest '{}' does not exist", path));
  json doc;
  try {
    is >> doc;
  } catch (const json::exception& e) {
    throw std::runtime_error(fmt::format("manifest '{}' is not valid JSON: {}", path, e.what()));
  }
  const fs::path base = fs::path(path).parent_path();

  std::vector<VolumeRecord> records;
  std::vector<std::string> problems;
  for (const auto& entry : doc.at("patients")) {
    VolumeRecord rec;
    try {
      rec.patient_id = entry.at("id").get<std::string>();
      rec.vendor = vendor_from_name(entry.at("vendor").get<std::string>());
      const auto dims = entry.at("dims").get<std::vector<int>>();
      if (dims.size() != 4) throw std::runtime_error("dims must be [T,Z,H,W]");
      rec.t = dims[0]; rec.z = dims[1]; rec.height = dims[2]; rec.width = dims[3];
      rec.spacing = {entry.at("spacing")[0].get<double>(), entry.at("spacing")[1].get<double>()};
      rec.ed_frame = entry.at("ed_frame").get<int>();
      rec.es_frame = entry.at("es_frame").get<int>();
      if (rec.ed_frame < 0 || rec.ed_frame >= rec.t || rec.es_frame < 0 ||
          rec.es_frame >= rec.t || rec.ed_frame == rec.es_frame)
        throw std::runtime_error(fmt::format("invalid ed/es frames {}/{} for T={}",
                                             rec.ed_frame, rec.es_frame, rec.t));
      const int64_t count = static_cast<int64_t>(rec.t) * rec.z * rec.height * rec.width;
      rec.voxels = read_blob<float>(base / entry.at("image_blob").get<std::string>(), count);
      if (entry.contains("label_blob")) {
        rec.labels = read_blob<uint8_t>(base / entry.at("label_blob").get<std::string>(), count);
        for (uint8_t v : rec.labels)
          if (v > 3) throw std::runtime_error(fmt::format("label value {} out of {{0..3}}", v));
      }
    } catch (const std::exception& e) {
      const std::string id = entry.contains("id") ? entry["id"].get<std::string>() : "<no id>";
      problems.push_back(fmt::format("patient {}: {}", id, e.what()));
      continue;
    }
    records.push_back(std::move(rec));
  }
  if (!problems.empty() && strict) {
    std::string msg = fmt::format("manifest '{}' has {} invalid entries:\n", path, problems.size());
    for (const auto& p : problems) msg += "  " + p + "\n";
    throw std::runtime_error(msg);
  }
  return records;
}

void write_manifest(const std::string& dir, const std::string& manifest_name,
                    const std::vector<VolumeRecord>& records) {
  fs::create_directories(dir);
  json doc;
  doc["patients"] = json::array();
  for (const auto& rec : records) {
    const std::string img_name = rec.patient_id + "_image.f32";
    write_blob(fs::path(dir) / img_name, rec.voxels);
    json entry = {
        {"id", rec.patient_id},
        {"vendor", vendor_name(rec.vendor)},
        {"dims", {rec.t, rec.z, rec.height, rec.width}},
        {"spacing", {rec.spacing.first, rec.spacing.second}},
        {"ed_frame", rec.ed_frame},
        {"es_frame", rec.es_frame},
        {"image_blob", img_name},
    };
    if (rec.has_labels()) {
      const std::string lbl_name = rec.patient_id + "_labels.u8";
      write_blob(fs::path(dir) / lbl_name, rec.labels);
      entry["label_blob"] = lbl_name;
    }
    doc["patients"].push_back(entry);
  }
  std::ofstream os(fs::path(dir) / manifest_name);
  if (!os) throw std::runtime_error(fmt::format("cannot write manifest in '{}'", dir));
  os << doc.dump(2) << "\n";
}

std::vector<SliceSample> extract_ed_es_slices(const VolumeRecord& rec) {
  std::vector<SliceSample> samples;
  samples.reserve(static_cast<size_t>(rec.z) * 2);
  for (Phase phase : {Phase::ED, Phase::ES}) {
    const int frame = phase == Phase::ED ? rec.ed_frame : rec.es_frame;
    for (int zi = 0; zi < rec.z; ++zi) {
      SliceSample s;
      s.patient_id = rec.patient_id;
      s.vendor = rec.vendor;
      s.phase = phase;
      s.z_index = zi;
      s.image = Image(rec.height, rec.width);
      const int64_t off = rec.frame_offset(frame, zi);
      for (int64_t p = 0; p < static_cast<int64_t>(rec.height) * rec.width; ++p)
        s.image.pixels[static_cast<size_t>(p)] = rec.voxels[static_cast<size_t>(off + p)];
      if (rec.has_labels()) {
        LabelMask m(rec.height, rec.width);
        for (int64_t p = 0; p < static_cast<int64_t>(rec.height) * rec.width; ++p)
          m.values[static_cast<size_t>(p)] = rec.labels[static_cast<size_t>(off + p)];
        s.mask = std::move(m);
      }
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

namespace {

// Shared crop geometry: returns, per axis, (src_start, dst_start, copy_len).
struct CropAxis { int src = 0, dst = 0, len = 0; };

CropAxis crop_axis(int in, int out) {
  CropAxis a;
  if (in >= out) {
    // window centered at floor(in/2)
    a.src = in / 2 - out / 2;
    a.src = std::clamp(a.src, 0, in - out);
    a.dst = 0;
    a.len = out;
  } else {
    a.src = 0;
    a.dst = (out - in) / 2;  // extra pixel falls bottom/right
    a.len = in;
  }
  return a;
}

template <typename Plane, typename T>
Plane crop_impl(const Plane& in, const T* src, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0)
    throw std::invalid_argument(fmt::format("center_crop target {}x{} must be positive",
                                            out_h, out_w));
  const CropAxis ay = crop_axis(in.height, out_h);
  const CropAxis ax = crop_axis(in.width, out_w);
  Plane out(out_h, out_w);
  for (int i = 0; i < ay.len; ++i)
    for (int j = 0; j < ax.len; ++j)
      out.at(ay.dst + i, ax.dst + j) = src[static_cast<int64_t>(ay.src + i) * in.width + ax.src + j];
  return out;
}

}  // namespace

Image center_crop(const Image& image, int out_h, int out_w) {
  return crop_impl<Image>(image, image.pixels.data(), out_h, out_w);
}

LabelMask center_crop(const LabelMask& mask, int out_h, int out_w) {
  return crop_impl<LabelMask>(mask, mask.values.data(), out_h, out_w);
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of empty list");
  if (!(p >= 0.0 && p <= 100.0))
    throw std::invalid_argument(fmt::format("percentile {} outside [0,100]", p));
  std::sort(values.begin(), values.end());
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(pos));
  const auto hi = static_cast<size_t>(std::ceil(pos));
  const double frac = pos - std::floor(pos);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

Image normalize_intensity(const Image& image) {
  const double p1 = percentile(image.pixels, 1.0);
  const double p99 = percentile(image.pixels, 99.0);
  Image out(image.height, image.width);
  if (p99 <= p1) return out;  // constant (or near-constant) image -> zeros
  for (size_t i = 0; i < image.pixels.size(); ++i) {
    const double v = std::clamp(image.pixels[i], p1, p99);
    out.pixels[i] = (v - p1) / (p99 - p1);
  }
  return out;
}

SplitAssignment patient_aware_split(const std::vector<VolumeRecord>& records,
                                    std::array<double, 3> ratios, uint64_t seed) {
  const double rsum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(rsum - 1.0) > 1e-9)
    throw std::invalid_argument(fmt::format("split ratios sum to {}, expected 1", rsum));
  if (records.size() < 3)
    throw std::invalid_argument(fmt::format("patient_aware_split needs >= 3 patients, got {}",
                                            records.size()));

  struct Pat { std::string id; int64_t slices; };
  std::vector<Pat> pats;
  int64_t total = 0;
  for (const auto& r : records) {
    pats.push_back({r.patient_id, static_cast<int64_t>(r.z) * 2});
    total += static_cast<int64_t>(r.z) * 2;
  }
  Rng rng(mix64(seed));
  rng.shuffle(pats);
  // largest-first keeps each split's realized ratio within one small patient
  std::stable_sort(pats.begin(), pats.end(),
                   [](const Pat& a, const Pat& b) { return a.slices > b.slices; });

  SplitAssignment out;
  std::array<int64_t, 3> assigned{0, 0, 0};
  std::array<std::set<std::string>*, 3> sets{&out.train, &out.validation, &out.test};
  for (const auto& p : pats) {
    int best = 0;
    double best_deficit = -1e300;
    for (int s = 0; s < 3; ++s) {
      const double deficit =
          ratios[static_cast<size_t>(s)] * static_cast<double>(total) -
          static_cast<double>(assigned[static_cast<size_t>(s)]);
      if (deficit > best_deficit) { best_deficit = deficit; best = s; }
    }
    sets[static_cast<size_t>(best)]->insert(p.id);
    assigned[static_cast<size_t>(best)] += p.slices;
  }
  for (int s = 0; s < 3; ++s)
    out.realized_ratios[static_cast<size_t>(s)] =
        static_cast<double>(assigned[static_cast<size_t>(s)]) / static_cast<double>(total);
  return out;
}

void sort_samples(std::vector<SliceSample>& samples) {
  std::stable_sort(samples.begin(), samples.end(),
                   [](const SliceSample& a, const SliceSample& b) {
                     if (a.patient_id != b.patient_id) return a.patient_id < b.patient_id;
                     if (a.phase != b.phase) return a.phase < b.phase;
                     return a.z_index < b.z_index;
                   });
}

}  // namespace cardseg
