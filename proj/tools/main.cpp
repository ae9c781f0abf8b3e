// cardseg: phantom generation, training, pseudo-labeling, scenario ladders,
// and standalone histogram matching behind one subcommand-style binary.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "cardseg/augment.hpp"
#include "cardseg/data.hpp"
#include "cardseg/image_io.hpp"
#include "cardseg/network.hpp"
#include "cardseg/phantom.hpp"
#include "cardseg/rng.hpp"
#include "cardseg/ssl.hpp"
#include "cardseg/trainer.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace cardseg;

namespace {

// --- config file ------------------------------------------------------------

struct RunConfig {
  PhantomConfig phantom;
  NetworkConfig network;
  TrainConfig train;
  AugmentationPolicy augmentation;  // full stack: rotations, flips
  PseudoLabelFilter filter;
  std::vector<ScenarioKind> scenario_kinds{
      ScenarioKind::FS,   ScenarioKind::FS50,  ScenarioKind::FSH, ScenarioKind::FS50H,
      ScenarioKind::SS,   ScenarioKind::SS50,  ScenarioKind::SSH, ScenarioKind::SS50H};
  std::vector<uint64_t> scenario_seeds{1, 2, 3};
  std::array<double, 3> split_ratios{0.701, 0.176, 0.123};
  double vendor_c_test_fraction = 0.4;
  int crop_size = 64;
  bool fine_tune = false;
  std::string output_dir;
};

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& section) {
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key))
      throw std::invalid_argument(
          fmt::format("config: unknown key '{}' in section '{}'", key, section));
}

Vendor vendor_key(const std::string& k) { return vendor_from_name(k); }

void parse_phantom(const json& j, PhantomConfig& c) {
  reject_unknown(j, {"image_size", "patients_per_vendor", "frames", "slices",
                     "vendor_profiles", "center_jitter", "lv_radius_range",
                     "myo_thickness_range", "rv_radius_range", "rv_angle_range", "seed"},
                 "phantom");
  if (j.contains("image_size")) c.image_size = j["image_size"];
  if (j.contains("frames")) c.frames = j["frames"];
  if (j.contains("slices")) c.slices = j["slices"];
  if (j.contains("center_jitter")) c.center_jitter = j["center_jitter"];
  if (j.contains("seed")) c.seed = j["seed"];
  auto pair_of = [](const json& v) {
    return std::pair<double, double>{v.at(0), v.at(1)};
  };
  if (j.contains("lv_radius_range")) c.lv_radius_range = pair_of(j["lv_radius_range"]);
  if (j.contains("myo_thickness_range")) c.myo_thickness_range = pair_of(j["myo_thickness_range"]);
  if (j.contains("rv_radius_range")) c.rv_radius_range = pair_of(j["rv_radius_range"]);
  if (j.contains("rv_angle_range")) c.rv_angle_range = pair_of(j["rv_angle_range"]);
  if (j.contains("patients_per_vendor"))
    for (const auto& [k, v] : j["patients_per_vendor"].items())
      c.patients_per_vendor[vendor_key(k)] = v;
  if (j.contains("vendor_profiles"))
    for (const auto& [k, v] : j["vendor_profiles"].items()) {
      reject_unknown(v, {"class_means", "noise_sigma", "gamma", "blur_sigma"},
                     "phantom.vendor_profiles." + k);
      VendorProfile& p = c.vendor_profiles[vendor_key(k)];
      if (v.contains("class_means"))
        for (size_t i = 0; i < 4; ++i) p.class_means[i] = v["class_means"].at(i);
      if (v.contains("noise_sigma")) p.noise_sigma = v["noise_sigma"];
      if (v.contains("gamma")) p.gamma = v["gamma"];
      if (v.contains("blur_sigma")) p.blur_sigma = v["blur_sigma"];
    }
}

void parse_network(const json& j, NetworkConfig& c) {
  reject_unknown(j, {"depth", "base_filters", "in_channels", "num_classes", "residual",
                     "upsample_mode"},
                 "network");
  if (j.contains("depth")) c.depth = j["depth"];
  if (j.contains("base_filters")) c.base_filters = j["base_filters"];
  if (j.contains("in_channels")) c.in_channels = j["in_channels"];
  if (j.contains("num_classes")) c.num_classes = j["num_classes"];
  if (j.contains("residual")) c.residual = j["residual"];
  if (j.contains("upsample_mode")) {
    const std::string m = j["upsample_mode"];
    if (m == "tconv") c.upsample_mode = UpsampleMode::kTransposedConv;
    else if (m == "nearest") c.upsample_mode = UpsampleMode::kNearestPlusConv;
    else throw std::invalid_argument(fmt::format("config: unknown upsample_mode '{}'", m));
  }
}

void parse_train(const json& j, TrainConfig& c) {
  reject_unknown(j, {"learning_rate", "epochs", "batch_size", "loss", "seed", "eval_every"},
                 "train");
  if (j.contains("learning_rate")) c.learning_rate = j["learning_rate"];
  if (j.contains("epochs")) c.epochs = j["epochs"];
  if (j.contains("batch_size")) c.batch_size = j["batch_size"];
  if (j.contains("loss")) c.loss = loss_from_name(j["loss"]);
  if (j.contains("seed")) c.seed = j["seed"];
  if (j.contains("eval_every")) c.eval_every = j["eval_every"];
}

void parse_augmentation(const json& j, AugmentationPolicy& p) {
  reject_unknown(j, {"rotation_ranges", "hflip_probability", "sharpen", "histogram_match",
                     "histogram_match_probability", "seed"},
                 "augmentation");
  if (j.contains("histogram_match_probability"))
    p.histogram_match_probability = j["histogram_match_probability"];
  if (j.contains("rotation_ranges")) {
    p.rotation_ranges.clear();
    for (const auto& r : j["rotation_ranges"])
      p.rotation_ranges.emplace_back(r.at(0), r.at(1));
  }
  if (j.contains("hflip_probability")) p.hflip_probability = j["hflip_probability"];
  if (j.contains("sharpen")) p.sharpen = j["sharpen"];
  if (j.contains("seed")) p.seed = j["seed"];
  if (j.contains("histogram_match")) {
    const std::string m = j["histogram_match"];
    if (m == "off") p.histogram_match = HistogramMatchMode::kOff;
    else if (m == "reference_pool") p.histogram_match = HistogramMatchMode::kToReferencePool;
    else throw std::invalid_argument(fmt::format("config: unknown histogram_match '{}'", m));
  }
}

void parse_filter(const json& j, PseudoLabelFilter& f) {
  reject_unknown(j, {"min_confidence", "flip_consistency_min_dice",
                     "foreground_fraction_bounds", "require_all_classes"},
                 "filter");
  if (j.contains("min_confidence")) f.min_confidence = j["min_confidence"];
  if (j.contains("flip_consistency_min_dice"))
    f.flip_consistency_min_dice = j["flip_consistency_min_dice"];
  if (j.contains("foreground_fraction_bounds"))
    f.foreground_fraction_bounds = {j["foreground_fraction_bounds"].at(0),
                                    j["foreground_fraction_bounds"].at(1)};
  if (j.contains("require_all_classes")) f.require_all_classes = j["require_all_classes"];
}

RunConfig load_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream f(path);
  if (!f) throw std::runtime_error(fmt::format("cannot open config file '{}'", path));
  json j = json::parse(f);
  reject_unknown(j, {"phantom", "network", "train", "augmentation", "filter", "scenarios",
                     "output_dir"},
                 "<top level>");
  if (j.contains("phantom")) parse_phantom(j["phantom"], c.phantom);
  if (j.contains("network")) parse_network(j["network"], c.network);
  if (j.contains("train")) parse_train(j["train"], c.train);
  if (j.contains("augmentation")) parse_augmentation(j["augmentation"], c.augmentation);
  if (j.contains("filter")) parse_filter(j["filter"], c.filter);
  if (j.contains("output_dir")) c.output_dir = j["output_dir"];
  if (j.contains("scenarios")) {
    const json& s = j["scenarios"];
    reject_unknown(s, {"kinds", "seeds", "split_ratios", "vendor_c_test_fraction",
                       "crop_size", "fine_tune"},
                   "scenarios");
    if (s.contains("kinds")) {
      c.scenario_kinds.clear();
      for (const auto& k : s["kinds"]) c.scenario_kinds.push_back(scenario_from_name(k));
    }
    if (s.contains("seeds")) {
      c.scenario_seeds.clear();
      for (const auto& v : s["seeds"]) c.scenario_seeds.push_back(v.get<uint64_t>());
    }
    if (s.contains("split_ratios"))
      for (size_t i = 0; i < 3; ++i) c.split_ratios[i] = s["split_ratios"].at(i);
    if (s.contains("vendor_c_test_fraction"))
      c.vendor_c_test_fraction = s["vendor_c_test_fraction"];
    if (s.contains("crop_size")) c.crop_size = s["crop_size"];
    if (s.contains("fine_tune")) c.fine_tune = s["fine_tune"];
  }
  return c;
}

json effective_config_json(const RunConfig& c) {
  json profiles;
  for (const auto& [v, p] : c.phantom.vendor_profiles)
    profiles[vendor_name(v)] = {{"class_means", p.class_means},
                                {"noise_sigma", p.noise_sigma},
                                {"gamma", p.gamma},
                                {"blur_sigma", p.blur_sigma}};
  json patients;
  for (const auto& [v, n] : c.phantom.patients_per_vendor) patients[vendor_name(v)] = n;
  json rot = json::array();
  for (const auto& [lo, hi] : c.augmentation.rotation_ranges) rot.push_back({lo, hi});
  json kinds = json::array();
  for (auto k : c.scenario_kinds) kinds.push_back(scenario_name(k));
  return json{
      {"phantom",
       {{"image_size", c.phantom.image_size},
        {"patients_per_vendor", patients},
        {"frames", c.phantom.frames},
        {"slices", c.phantom.slices},
        {"vendor_profiles", profiles},
        {"center_jitter", c.phantom.center_jitter},
        {"lv_radius_range", {c.phantom.lv_radius_range.first, c.phantom.lv_radius_range.second}},
        {"myo_thickness_range",
         {c.phantom.myo_thickness_range.first, c.phantom.myo_thickness_range.second}},
        {"rv_radius_range", {c.phantom.rv_radius_range.first, c.phantom.rv_radius_range.second}},
        {"rv_angle_range", {c.phantom.rv_angle_range.first, c.phantom.rv_angle_range.second}},
        {"seed", c.phantom.seed}}},
      {"network",
       {{"depth", c.network.depth},
        {"base_filters", c.network.base_filters},
        {"in_channels", c.network.in_channels},
        {"num_classes", c.network.num_classes},
        {"residual", c.network.residual},
        {"upsample_mode",
         c.network.upsample_mode == UpsampleMode::kTransposedConv ? "tconv" : "nearest"}}},
      {"train",
       {{"learning_rate", c.train.learning_rate},
        {"epochs", c.train.epochs},
        {"batch_size", c.train.batch_size},
        {"loss", loss_name(c.train.loss)},
        {"seed", c.train.seed},
        {"eval_every", c.train.eval_every}}},
      {"augmentation",
       {{"rotation_ranges", rot},
        {"hflip_probability", c.augmentation.hflip_probability},
        {"sharpen", c.augmentation.sharpen},
        {"histogram_match",
         c.augmentation.histogram_match == HistogramMatchMode::kOff ? "off" : "reference_pool"},
        {"histogram_match_probability", c.augmentation.histogram_match_probability},
        {"seed", c.augmentation.seed}}},
      {"filter",
       {{"min_confidence", c.filter.min_confidence},
        {"flip_consistency_min_dice", c.filter.flip_consistency_min_dice},
        {"foreground_fraction_bounds",
         {c.filter.foreground_fraction_bounds.first, c.filter.foreground_fraction_bounds.second}},
        {"require_all_classes", c.filter.require_all_classes}}},
      {"scenarios",
       {{"kinds", kinds},
        {"seeds", c.scenario_seeds},
        {"split_ratios", c.split_ratios},
        {"vendor_c_test_fraction", c.vendor_c_test_fraction},
        {"crop_size", c.crop_size},
        {"fine_tune", c.fine_tune}}},
      {"output_dir", c.output_dir}};
}

void print_effective_config(const RunConfig& c) {
  fmt::print("effective configuration:\n{}\n", effective_config_json(c).dump(2));
}

// --- output staging ----------------------------------------------------------

std::string resolve_out(std::string out) {
  if (out.empty()) throw std::invalid_argument("--out is required");
  fs::path p(out);
  if (p.is_relative())
    if (const char* root = std::getenv("CARDSEG_OUT_ROOT")) p = fs::path(root) / p;
  return p.string();
}

/// Outputs land in `<out>.tmp` and are renamed to `<out>` only on success,
/// so a failed run never leaves a partial output directory behind.
class StagedDir {
 public:
  explicit StagedDir(const std::string& out) : final_(out), tmp_(out + ".tmp") {
    if (fs::exists(final_))
      throw std::runtime_error(fmt::format("output directory '{}' already exists", final_));
    fs::remove_all(tmp_);
    fs::create_directories(tmp_);
  }
  ~StagedDir() {
    if (!committed_) fs::remove_all(tmp_);
  }
  const std::string& path() const { return tmp_; }
  fs::path file(const std::string& name) const { return fs::path(tmp_) / name; }
  void commit() {
    fs::rename(tmp_, final_);
    committed_ = true;
  }

 private:
  std::string final_, tmp_;
  bool committed_ = false;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  f << text;
}

// --- shared data plumbing ----------------------------------------------------

std::vector<SliceSample> preprocessed(const std::vector<VolumeRecord>& records, int crop) {
  std::vector<SliceSample> out;
  for (const auto& r : records)
    for (SliceSample& s : extract_ed_es_slices(r)) {
      s.image = normalize_intensity(center_crop(s.image, crop, crop));
      if (s.mask) s.mask = center_crop(*s.mask, crop, crop);
      out.push_back(std::move(s));
    }
  sort_samples(out);
  return out;
}

std::vector<VolumeRecord> labeled_only(const std::vector<VolumeRecord>& records) {
  std::vector<VolumeRecord> out;
  for (const auto& r : records)
    if (r.has_labels()) out.push_back(r);
  return out;
}

/// Rebuild a PhantomCohort from a generated manifest directory: labeled A/B
/// records stay as-is, vendor-C hidden truth comes from `<id>_audit.u8`.
PhantomCohort cohort_from_manifest(const std::string& manifest_path) {
  PhantomCohort cohort;
  const fs::path dir = fs::path(manifest_path).parent_path();
  for (auto& r : load_manifest(manifest_path)) {
    if (r.vendor == Vendor::C) {
      const fs::path audit = dir / (r.patient_id + "_audit.u8");
      std::ifstream f(audit, std::ios::binary);
      if (!f)
        throw std::runtime_error(fmt::format(
            "missing hidden-truth blob '{}' for vendor-C patient {}", audit.string(),
            r.patient_id));
      std::vector<uint8_t> mask(r.voxels.size());
      f.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
      if (f.gcount() != static_cast<std::streamsize>(mask.size()))
        throw std::runtime_error(fmt::format("truncated audit blob '{}'", audit.string()));
      cohort.audit_masks[r.patient_id] = std::move(mask);
      r.labels.clear();
      cohort.unlabeled.push_back(std::move(r));
    } else {
      if (!r.has_labels())
        throw std::runtime_error(
            fmt::format("labeled vendor {} patient {} has no labels in the manifest",
                        vendor_name(r.vendor), r.patient_id));
      cohort.labeled.push_back(std::move(r));
    }
  }
  return cohort;
}

// --- subcommands ---------------------------------------------------------

int cmd_generate(const RunConfig& cfg, const std::string& out) {
  print_effective_config(cfg);
  cfg.phantom.validate();
  PhantomCohort cohort = generate_cohort(cfg.phantom);

  StagedDir stage(out);
  std::vector<VolumeRecord> all = cohort.labeled;
  for (const auto& r : cohort.unlabeled) all.push_back(r);
  write_manifest(stage.path(), "manifest.json", all);
  for (const auto& [pid, mask] : cohort.audit_masks) {
    std::ofstream f(stage.file(pid + "_audit.u8"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(mask.data()),
            static_cast<std::streamsize>(mask.size()));
  }
  write_text(stage.file("config.json"), effective_config_json(cfg).dump(2) + "\n");
  stage.commit();

  int slices = 0;
  for (const auto& r : all) slices += 2 * r.z;
  fmt::print("wrote {} patients ({} labeled, {} unlabeled vendor C), {} ED/ES slices to {}\n",
             all.size(), cohort.labeled.size(), cohort.unlabeled.size(), slices, out);
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& manifest, const std::string& out) {
  print_effective_config(cfg);
  auto records = labeled_only(load_manifest(manifest));
  if (records.empty()) throw std::runtime_error("manifest contains no labeled records");

  SplitAssignment split =
      patient_aware_split(records, cfg.split_ratios, hash_combine(cfg.train.seed, "split"));
  std::vector<VolumeRecord> train_recs, val_recs;
  for (const auto& r : records) {
    if (split.train.count(r.patient_id)) train_recs.push_back(r);
    if (split.validation.count(r.patient_id)) val_recs.push_back(r);
  }
  auto train_set = preprocessed(train_recs, cfg.crop_size);
  auto val_set = preprocessed(val_recs, cfg.crop_size);
  fmt::print("training on {} slices, validating on {}\n", train_set.size(), val_set.size());

  auto net = build_network(cfg.network, hash_combine(cfg.train.seed, "init"));
  TrainResult result = train(net, train_set, val_set, cfg.train);

  StagedDir stage(out);
  result.best.save_checkpoint(stage.file("checkpoint.bin").string());
  std::string csv = fmt::format("epoch,{}_loss,val_dice,seconds\n", loss_name(cfg.train.loss));
  for (const auto& m : result.metrics)
    csv += fmt::format("{},{:.6f},{},{:.3f}\n", m.epoch, m.train_loss,
                       m.val_dice ? fmt::format("{:.6f}", m.val_dice->average) : "",
                       m.wall_seconds);
  write_text(stage.file("metrics.csv"), csv);
  write_text(stage.file("summary.txt"),
             fmt::format("final_train_loss {:.6f}\nbest_val_dice {:.6f}\n",
                         result.final_train_loss, result.best_val_dice));
  write_text(stage.file("config.json"), effective_config_json(cfg).dump(2) + "\n");
  stage.commit();
  fmt::print("best validation dice {:.4f}; checkpoint written to {}\n", result.best_val_dice,
             out);
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& manifest, int crop,
                 const std::string& out, int previews) {
  auto net = NetworkInstance::load_checkpoint(checkpoint);
  auto records = labeled_only(load_manifest(manifest));
  if (records.empty()) throw std::runtime_error("manifest contains no labeled records");
  auto samples = preprocessed(records, crop);
  DiceReport report = evaluate(net, samples);
  fmt::print("{}", report.to_text());

  if (!out.empty()) {
    StagedDir stage(out);
    write_text(stage.file("dice.csv"), "scenario,split,class,dice\n" +
                                           report.to_csv_rows("evaluate", "all"));
    if (previews > 0) {
      Prediction pred = predict(net, samples);
      for (int i = 0; i < previews && i < static_cast<int>(samples.size()); ++i) {
        Image row = compose_row({samples[static_cast<size_t>(i)].image,
                                 overlay_mask(samples[static_cast<size_t>(i)].image,
                                              *samples[static_cast<size_t>(i)].mask),
                                 overlay_mask(samples[static_cast<size_t>(i)].image,
                                              pred.masks[static_cast<size_t>(i)])});
        write_png_gray(stage.file(fmt::format("preview_{:03d}.png", i)).string(), row);
      }
    }
    stage.commit();
    fmt::print("report written to {}\n", out);
  }
  return 0;
}

int cmd_pseudo_label(const RunConfig& cfg, const std::string& checkpoint,
                     const std::string& manifest, const std::string& out) {
  print_effective_config(cfg);
  auto net = NetworkInstance::load_checkpoint(checkpoint);
  std::vector<VolumeRecord> unlabeled;
  for (auto& r : load_manifest(manifest))
    if (!r.has_labels()) unlabeled.push_back(std::move(r));
  if (unlabeled.empty()) throw std::runtime_error("manifest contains no unlabeled records");

  auto samples = preprocessed(unlabeled, cfg.crop_size);
  PseudoLabeledSet set = pseudo_label(net, samples, cfg.filter);

  StagedDir stage(out);
  std::string csv = "sample,accepted,confidence,flip_consistency,reasons\n";
  for (size_t i = 0; i < set.accepted.size(); ++i)
    csv += fmt::format("{},1,{:.6f},{:.6f},\n", set.accepted[i].id(),
                       set.accepted_confidence[i], set.accepted_flip_consistency[i]);
  for (const auto& r : set.rejected)
    csv += fmt::format("{},0,{:.6f},{:.6f},{}\n", r.sample_id, r.confidence,
                       r.flip_consistency, fmt::format("{}", fmt::join(r.reasons, ";")));
  write_text(stage.file("pseudo_labels.csv"), csv);
  for (const auto& s : set.accepted) {
    std::string name = s.id();
    for (char& ch : name)
      if (ch == '/') ch = '_';
    std::ofstream f(stage.file(name + "_mask.u8"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(s.mask->values.data()),
            static_cast<std::streamsize>(s.mask->values.size()));
  }
  stage.commit();
  fmt::print("accepted {} / {} slices; masks and audit CSV written to {}\n",
             set.accepted.size(), samples.size(), out);
  return 0;
}

int cmd_scenarios(const RunConfig& cfg, const std::string& manifest, const std::string& out,
                  const std::string& only, int jobs) {
  print_effective_config(cfg);
  PhantomCohort cohort =
      manifest.empty() ? generate_cohort(cfg.phantom) : cohort_from_manifest(manifest);

  std::vector<ScenarioKind> kinds = cfg.scenario_kinds;
  if (!only.empty()) {
    kinds.clear();
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ',')) kinds.push_back(scenario_from_name(tok));
  }

  std::vector<ScenarioSpec> specs;
  for (uint64_t seed : cfg.scenario_seeds)
    for (ScenarioKind k : kinds) {
      ScenarioSpec s;
      s.kind = k;
      s.seed = seed;
      s.train_config = cfg.train;
      s.network = cfg.network;
      s.split_ratios = cfg.split_ratios;
      s.vendor_c_test_fraction = cfg.vendor_c_test_fraction;
      s.filter = cfg.filter;
      s.crop_size = cfg.crop_size;
      s.fine_tune = cfg.fine_tune;
      specs.push_back(std::move(s));
    }

  fmt::print("running {} scenario runs ({} kinds x {} seeds) with {} jobs\n", specs.size(),
             kinds.size(), cfg.scenario_seeds.size(), jobs);
  ComparisonReport report = compare_scenarios(specs, cohort, jobs);

  StagedDir stage(out);
  write_text(stage.file("scenarios.csv"), report.to_csv());
  write_text(stage.file("table.txt"), report.to_table());
  std::string audit = "scenario,sample,status,reasons,confidence,flip_consistency,audit_dice\n";
  for (const auto& r : report.rows)
    for (const auto& row : r.audit_rows) audit += row;
  write_text(stage.file("audit.csv"), audit);
  write_text(stage.file("config.json"), effective_config_json(cfg).dump(2) + "\n");
  stage.commit();
  fmt::print("{}\nresults written to {}\n", report.to_table(), out);
  return 0;
}

int cmd_histmatch(const std::string& source_path, const std::string& reference_path,
                  const std::string& out_path) {
  Image source = read_png_gray(source_path);
  Image reference = read_png_gray(reference_path);
  Image matched = histogram_match(source, compute_histogram(reference));
  write_png_gray(out_path, matched);
  if (source.height == reference.height && source.width == reference.width) {
    fs::path trip = fs::path(out_path);
    trip.replace_extension("");
    write_png_gray(trip.string() + "_triptych.png",
                   compose_row({source, reference, matched}));
  }
  fmt::print("matched image written to {}\n", out_path);
  return 0;
}

int cmd_report(const std::string& csv_path, const std::string& out_path) {
  std::ifstream f(csv_path);
  if (!f) throw std::runtime_error(fmt::format("cannot open '{}'", csv_path));
  std::string line;
  if (!std::getline(f, line) || line.rfind("scenario,seed,", 0) != 0)
    throw std::runtime_error(fmt::format("'{}' is not a scenario CSV", csv_path));

  ComparisonReport report;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cols.push_back(tok);
    if (cols.size() != 13)
      throw std::runtime_error(fmt::format("malformed scenario CSV row: '{}'", line));
    ScenarioReport r;
    r.kind = scenario_from_name(cols[0]);
    r.seed = std::stoull(cols[1]);
    r.train.per_class[1] = std::stod(cols[2]);
    r.validation.per_class[1] = std::stod(cols[3]);
    r.train.per_class[3] = std::stod(cols[4]);
    r.validation.per_class[3] = std::stod(cols[5]);
    r.train.per_class[2] = std::stod(cols[6]);
    r.validation.per_class[2] = std::stod(cols[7]);
    r.test_ab.average = std::stod(cols[8]);
    r.test_c.average = std::stod(cols[9]);
    r.pseudo_accepted = std::stoi(cols[10]);
    r.pseudo_rejected = std::stoi(cols[11]);
    r.pseudo_audit_dice = std::stod(cols[12]);
    report.rows.push_back(std::move(r));
  }
  const std::string table = report.to_table();
  fmt::print("{}", table);
  if (!out_path.empty()) write_text(out_path, table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cardiac MRI segmentation pipeline: synthetic phantoms, residual U-Net "
               "training, histogram-matching adaptation, and pseudo-label retraining"};
  app.require_subcommand(0, 1);

  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults,
               "print the full default configuration as JSON and exit");

  std::string config_path, manifest, out, checkpoint, only, arch, loss;
  std::string source_png, reference_png, out_png, csv_path;
  int jobs = 1, previews = 0, crop = -1;
  int64_t seed = -1;
  int epochs = -1, batch_size = -1;
  double lr = -1.0;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "JSON run configuration file");
    cmd->add_option("--seed", seed, "override every seed in the configuration");
    if (needs_out) cmd->add_option("--out", out, "output directory")->required();
  };

  auto* gen = app.add_subcommand("generate", "generate a phantom cohort manifest");
  add_common(gen, true);

  auto* tr = app.add_subcommand("train", "train a network on a labeled manifest");
  add_common(tr, true);
  tr->add_option("--manifest", manifest, "cohort manifest")->required();
  tr->add_option("--arch", arch, "network architecture: unet | resunet");
  tr->add_option("--loss", loss, "loss: ce | dice | both");
  tr->add_option("--epochs", epochs, "override train.epochs");
  tr->add_option("--lr", lr, "override train.learning_rate");
  tr->add_option("--batch-size", batch_size, "override train.batch_size");
  tr->add_option("--crop", crop, "center-crop size");

  auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on labeled records");
  ev->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  ev->add_option("--manifest", manifest, "cohort manifest")->required();
  ev->add_option("--crop", crop, "center-crop size");
  ev->add_option("--out", out, "optional report directory");
  ev->add_option("--previews", previews, "write N overlay preview PNGs");

  auto* pl = app.add_subcommand("pseudo-label", "pseudo-label unlabeled records");
  add_common(pl, true);
  pl->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  pl->add_option("--manifest", manifest, "cohort manifest")->required();
  pl->add_option("--crop", crop, "center-crop size");

  auto* sc = app.add_subcommand("scenarios", "run the supervision-ladder comparison");
  add_common(sc, true);
  sc->add_option("--manifest", manifest, "generated cohort manifest (default: regenerate)");
  sc->add_option("--only", only, "comma-separated scenario subset, e.g. FS,SSH");
  sc->add_option("--jobs", jobs, "parallel scenario workers");
  sc->add_option("--crop", crop, "center-crop size");

  auto* hm = app.add_subcommand("histmatch", "match a source PNG to a reference PNG");
  hm->add_option("source", source_png, "source grayscale PNG")->required();
  hm->add_option("reference", reference_png, "reference grayscale PNG")->required();
  hm->add_option("output", out_png, "output PNG path")->required();

  auto* rp = app.add_subcommand("report", "format a scenarios CSV as a text table");
  rp->add_option("--csv", csv_path, "scenarios.csv from a previous run")->required();
  rp->add_option("--out", out, "optional path for the formatted table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (dump_defaults) {
      fmt::print("{}\n", effective_config_json(RunConfig{}).dump(2));
      return 0;
    }
    if (app.get_subcommands().empty()) {
      fmt::print(stderr, "error: a subcommand is required (see --help)\n");
      return 1;
    }
    RunConfig cfg = load_config(config_path);
    if (seed >= 0) {
      const auto s = static_cast<uint64_t>(seed);
      cfg.phantom.seed = s;
      cfg.train.seed = s;
      cfg.augmentation.seed = s;
      cfg.scenario_seeds = {s, s + 1, s + 2};
    }
    if (!arch.empty()) {
      if (arch == "unet") cfg.network.residual = false;
      else if (arch == "resunet") cfg.network.residual = true;
      else throw std::invalid_argument(fmt::format("unknown --arch '{}'", arch));
    }
    if (!loss.empty()) cfg.train.loss = loss_from_name(loss);
    if (epochs > 0) cfg.train.epochs = epochs;
    cfg.train.augmentation = cfg.augmentation;
    if (lr > 0) cfg.train.learning_rate = lr;
    if (batch_size > 0) cfg.train.batch_size = batch_size;
    if (crop > 0) cfg.crop_size = crop;

    if (gen->parsed()) return cmd_generate(cfg, resolve_out(out));
    if (tr->parsed()) return cmd_train(cfg, manifest, resolve_out(out));
    if (ev->parsed()) return cmd_evaluate(checkpoint, manifest, cfg.crop_size, out.empty() ? out : resolve_out(out), previews);
    if (pl->parsed()) return cmd_pseudo_label(cfg, checkpoint, manifest, resolve_out(out));
    if (sc->parsed()) return cmd_scenarios(cfg, manifest, resolve_out(out), only, jobs);
    if (hm->parsed()) return cmd_histmatch(source_png, reference_png, out_png);
    if (rp->parsed()) return cmd_report(csv_path, out);
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
