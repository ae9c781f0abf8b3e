#include "cardseg/ssl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fmt/format.h>
#include <fmt/ranges.h>
#include <future>
#include <map>
#include <mutex>
#include <set>
#include <sstream>

#include "cardseg/rng.hpp"

namespace cardseg {

std::string scenario_name(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::FS: return "FS";
    case ScenarioKind::FS50: return "FS50";
    case ScenarioKind::FSH: return "FSH";
    case ScenarioKind::FS50H: return "FS50H";
    case ScenarioKind::SS: return "SS";
    case ScenarioKind::SS50: return "SS50";
    case ScenarioKind::SSH: return "SSH";
    case ScenarioKind::SS50H: return "SS50H";
  }
  return "?";
}

ScenarioKind scenario_from_name(const std::string& s) {
  for (ScenarioKind k : {ScenarioKind::FS, ScenarioKind::FS50, ScenarioKind::FSH,
                         ScenarioKind::FS50H, ScenarioKind::SS, ScenarioKind::SS50,
                         ScenarioKind::SSH, ScenarioKind::SS50H})
    if (scenario_name(k) == s) return k;
  throw std::invalid_argument(fmt::format("unknown scenario '{}'", s));
}

double scenario_labeled_fraction(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::FS50:
    case ScenarioKind::FS50H:
    case ScenarioKind::SS50:
    case ScenarioKind::SS50H:
      return 0.5;
    default:
      return 1.0;
  }
}

bool scenario_histogram_matching(ScenarioKind k) {
  return k == ScenarioKind::FSH || k == ScenarioKind::FS50H || k == ScenarioKind::SSH ||
         k == ScenarioKind::SS50H;
}

bool scenario_semi_supervised(ScenarioKind k) {
  return k == ScenarioKind::SS || k == ScenarioKind::SS50 || k == ScenarioKind::SSH ||
         k == ScenarioKind::SS50H;
}

void PseudoLabelFilter::validate() const {
  auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!in01(min_confidence) || !in01(flip_consistency_min_dice) ||
      !in01(foreground_fraction_bounds.first) || !in01(foreground_fraction_bounds.second))
    throw std::invalid_argument("PseudoLabelFilter thresholds must lie in [0,1]");
  if (foreground_fraction_bounds.first > foreground_fraction_bounds.second)
    throw std::invalid_argument("PseudoLabelFilter foreground bounds are not ordered");
}

PseudoLabelFilter PseudoLabelFilter::vacuous() {
  PseudoLabelFilter f;
  f.min_confidence = 0.0;
  f.flip_consistency_min_dice = 0.0;
  f.foreground_fraction_bounds = {0.0, 1.0};
  f.require_all_classes = false;
  return f;
}

PseudoLabeledSet pseudo_label(const NetworkInstance& net,
                              const std::vector<SliceSample>& unlabeled_samples,
                              const PseudoLabelFilter& filter) {
  filter.validate();
  if (unlabeled_samples.empty())
    throw std::invalid_argument("pseudo_label: empty unlabeled pool");

  const int C = net.config().num_classes;
  const Prediction straight = predict(net, unlabeled_samples);

  std::vector<SliceSample> flipped;
  flipped.reserve(unlabeled_samples.size());
  for (const auto& s : unlabeled_samples) {
    SliceSample f = s;
    f.image = hflip(s.image, std::nullopt).first;
    flipped.push_back(std::move(f));
  }
  const Prediction mirrored = predict(net, flipped);

  PseudoLabeledSet out;
  for (size_t i = 0; i < unlabeled_samples.size(); ++i) {
    const LabelMask& mask = straight.masks[i];
    const Tensor& probs = straight.probability_maps[i];
    const int H = mask.height, W = mask.width;
    const int64_t plane = static_cast<int64_t>(H) * W;

    int64_t fg = 0;
    double conf_sum = 0.0;
    std::set<int> classes_seen;
    for (int64_t p = 0; p < plane; ++p) {
      const int cls = mask.values[static_cast<size_t>(p)];
      if (cls == 0) continue;
      ++fg;
      classes_seen.insert(cls);
      conf_sum += probs.data()[static_cast<size_t>(cls * plane + p)];
    }
    const double confidence = fg > 0 ? conf_sum / static_cast<double>(fg) : 0.0;
    const double fraction = static_cast<double>(fg) / static_cast<double>(plane);

    // mirror the mirrored prediction back before comparing
    LabelMask unflipped(H, W);
    for (int r = 0; r < H; ++r)
      for (int c = 0; c < W; ++c)
        unflipped.at(r, c) = mirrored.masks[i].at(r, W - 1 - c);
    double flip_dice = 0.0;
    for (int cls = 1; cls < C; ++cls) flip_dice += dice_coefficient(mask, unflipped, cls);
    flip_dice /= static_cast<double>(C - 1);

    std::vector<std::string> reasons;
    if (confidence < filter.min_confidence) reasons.push_back("low_confidence");
    if (flip_dice < filter.flip_consistency_min_dice) reasons.push_back("flip_inconsistent");
    if (fraction < filter.foreground_fraction_bounds.first ||
        fraction > filter.foreground_fraction_bounds.second)
      reasons.push_back("foreground_fraction");
    if (filter.require_all_classes && static_cast<int>(classes_seen.size()) < C - 1)
      reasons.push_back("missing_class");

    if (reasons.empty()) {
      SliceSample accepted = unlabeled_samples[i];
      accepted.mask = mask;
      accepted.pseudo = true;
      out.accepted.push_back(std::move(accepted));
      out.accepted_confidence.push_back(confidence);
      out.accepted_flip_consistency.push_back(flip_dice);
    } else {
      out.rejected.push_back(
          {unlabeled_samples[i].id(), std::move(reasons), confidence, flip_dice, fraction});
    }
  }
  return out;
}

std::vector<SliceSample> merge_datasets(const std::vector<SliceSample>& labeled,
                                        const PseudoLabeledSet& pseudo) {
  std::set<std::string> ids;
  for (const auto& s : labeled)
    if (!ids.insert(s.id()).second)
      throw std::invalid_argument(fmt::format("merge_datasets: duplicate id '{}'", s.id()));
  std::vector<SliceSample> merged = labeled;
  for (const auto& s : pseudo.accepted) {
    if (!ids.insert(s.id()).second)
      throw std::invalid_argument(
          fmt::format("merge_datasets: pseudo sample '{}' collides with labeled set", s.id()));
    merged.push_back(s);
  }
  return merged;
}

namespace {

std::vector<SliceSample> preprocess_record(const VolumeRecord& rec, int crop) {
  std::vector<SliceSample> out = extract_ed_es_slices(rec);
  for (auto& s : out) {
    s.image = normalize_intensity(center_crop(s.image, crop, crop));
    if (s.mask) s.mask = center_crop(*s.mask, crop, crop);
  }
  return out;
}

std::vector<SliceSample> gather(const std::vector<VolumeRecord>& records,
                                const std::set<std::string>& patients, int crop) {
  std::vector<SliceSample> out;
  for (const auto& rec : records) {
    if (!patients.count(rec.patient_id)) continue;
    auto s = preprocess_record(rec, crop);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  sort_samples(out);
  return out;
}

/// Ground-truth masks for vendor-C slices, rebuilt from the hidden audit
/// labels with the same crop geometry as preprocessing.
std::vector<SliceSample> audited_c_samples(const PhantomCohort& cohort,
                                           const std::set<std::string>& patients, int crop) {
  std::vector<SliceSample> out;
  for (const auto& rec : cohort.unlabeled) {
    if (!patients.count(rec.patient_id)) continue;
    const auto& labels = cohort.audit_mask(rec.patient_id);
    VolumeRecord copy = rec;
    copy.labels = labels;
    auto s = preprocess_record(copy, crop);
    out.insert(out.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  sort_samples(out);
  return out;
}

}  // namespace

std::string ScenarioReport::csv_header() {
  return "scenario,seed,tr_lv,val_lv,tr_rv,val_rv,tr_myo,val_myo,"
         "test_ab_avg,test_c_avg,pseudo_accepted,pseudo_rejected,pseudo_audit_dice\n";
}

namespace {
double cls(const DiceReport& r, int c) {
  auto it = r.per_class.find(c);
  return it == r.per_class.end() ? 0.0 : it->second;
}
}  // namespace

std::string ScenarioReport::to_csv_row() const {
  return fmt::format("{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{:.6f}\n",
                     scenario_name(kind), seed, cls(train, 1), cls(validation, 1),
                     cls(train, 3), cls(validation, 3), cls(train, 2), cls(validation, 2),
                     test_ab.average, test_c.average, pseudo_accepted, pseudo_rejected,
                     pseudo_audit_dice);
}

ScenarioReport run_scenario(const ScenarioSpec& spec, const PhantomCohort& cohort) {
  const auto t0 = std::chrono::steady_clock::now();
  spec.train_config.validate();
  spec.network.validate();
  spec.filter.validate();
  if (cohort.labeled.empty() || cohort.unlabeled.empty())
    throw std::invalid_argument(fmt::format(
        "scenario {}: cohort must contain labeled A/B and unlabeled C records",
        scenario_name(spec.kind)));

  const int64_t audit_reads_before = PhantomCohort::audit_reads_this_thread();
  ScenarioReport report;
  report.kind = spec.kind;
  report.seed = spec.seed;

  try {
    // (1) patient-aware split of the labeled cohort, then labeled-fraction
    // subsampling at patient granularity
    const SplitAssignment split =
        patient_aware_split(cohort.labeled, spec.split_ratios, hash_combine(spec.seed, "split"));
    std::vector<std::string> train_patients(split.train.begin(), split.train.end());
    const double fraction = scenario_labeled_fraction(spec.kind);
    if (fraction < 1.0) {
      Rng rng(hash_combine(spec.seed, "labeled_fraction"));
      rng.shuffle(train_patients);
      train_patients.resize(std::max<size_t>(
          1, static_cast<size_t>(std::llround(fraction * train_patients.size()))));
    }
    const std::set<std::string> train_set_ids(train_patients.begin(), train_patients.end());

    // vendor C: pseudo-label pool vs held-out test patients
    std::vector<std::string> c_patients;
    for (const auto& rec : cohort.unlabeled) c_patients.push_back(rec.patient_id);
    std::sort(c_patients.begin(), c_patients.end());
    Rng c_rng(hash_combine(spec.seed, "vendor_c_split"));
    c_rng.shuffle(c_patients);
    const auto n_test = std::max<size_t>(
        1, static_cast<size_t>(std::llround(spec.vendor_c_test_fraction * c_patients.size())));
    const std::set<std::string> c_test_ids(c_patients.begin(),
                                           c_patients.begin() + static_cast<long>(n_test));
    std::set<std::string> c_pool_ids(c_patients.begin() + static_cast<long>(n_test),
                                     c_patients.end());

    const int crop = spec.crop_size;
    std::vector<SliceSample> train_samples = gather(cohort.labeled, train_set_ids, crop);
    const std::vector<SliceSample> val_samples = gather(cohort.labeled, split.validation, crop);
    const std::vector<SliceSample> test_ab_samples = gather(cohort.labeled, split.test, crop);
    const std::vector<SliceSample> c_pool_samples = gather(cohort.unlabeled, c_pool_ids, crop);

    // (2) augmentation policy, optionally matched to the vendor-C pool
    TrainConfig tc = spec.train_config;
    tc.seed = hash_combine(spec.seed, "train");
    tc.augmentation.seed = hash_combine(spec.seed, "augment");
    if (scenario_histogram_matching(spec.kind)) {
      auto pool = std::make_shared<std::vector<Image>>();
      for (const auto& s : c_pool_samples) pool->push_back(s.image);
      tc.augmentation.histogram_match = HistogramMatchMode::kToReferencePool;
      tc.augmentation.reference_pool = std::move(pool);
    } else {
      tc.augmentation.histogram_match = HistogramMatchMode::kOff;
      tc.augmentation.reference_pool.reset();
    }

    // (3) supervised training
    const uint64_t init_seed = hash_combine(spec.seed, "init");
    NetworkInstance net = build_network(spec.network, init_seed);
    TrainResult supervised = train(net, train_samples, val_samples, tc);
    NetworkInstance model = std::move(supervised.best);

    // (4) pseudo-label round: predict once, filter, merge, retrain
    PseudoLabeledSet pseudo;
    if (scenario_semi_supervised(spec.kind)) {
      pseudo = pseudo_label(model, c_pool_samples, spec.filter);
      const std::vector<SliceSample> merged = merge_datasets(train_samples, pseudo);
      NetworkInstance retrained =
          spec.fine_tune ? model.clone() : build_network(spec.network, init_seed);
      TrainResult second = train(retrained, merged, val_samples, tc);
      model = std::move(second.best);
      report.pseudo_accepted = static_cast<int>(pseudo.accepted.size());
      report.pseudo_rejected = static_cast<int>(pseudo.rejected.size());
    }

    if (PhantomCohort::audit_reads_this_thread() != audit_reads_before)
      throw std::logic_error(fmt::format(
          "scenario {}: hidden vendor-C masks were read during training stages",
          scenario_name(spec.kind)));

    // (5) evaluation; hidden vendor-C truth becomes visible only here
    report.train = evaluate(model, train_samples);
    report.validation = evaluate(model, val_samples);
    report.test_ab = evaluate(model, test_ab_samples);
    const std::vector<SliceSample> c_test_truth = audited_c_samples(cohort, c_test_ids, crop);
    report.test_c = evaluate(model, c_test_truth);

    if (scenario_semi_supervised(spec.kind)) {
      const std::vector<SliceSample> c_pool_truth = audited_c_samples(cohort, c_pool_ids, crop);
      std::map<std::string, const LabelMask*> truth_by_id;
      for (const auto& s : c_pool_truth) truth_by_id[s.id()] = &*s.mask;
      double audit_sum = 0.0;
      for (size_t i = 0; i < pseudo.accepted.size(); ++i) {
        const auto& s = pseudo.accepted[i];
        std::vector<LabelMask> p{*s.mask}, t{*truth_by_id.at(s.id())};
        const double d = evaluate_set(p, t).average;
        audit_sum += d;
        report.audit_rows.push_back(fmt::format("{},{},accepted,,{:.4f},{:.4f},{:.4f}",
                                                scenario_name(spec.kind), s.id(),
                                                pseudo.accepted_confidence[i],
                                                pseudo.accepted_flip_consistency[i], d) + "\n");
      }
      for (const auto& r : pseudo.rejected)
        report.audit_rows.push_back(fmt::format("{},{},rejected,{},{:.4f},{:.4f},",
                                                scenario_name(spec.kind), r.sample_id,
                                                fmt::join(r.reasons, "|"), r.confidence,
                                                r.flip_consistency) + "\n");
      report.pseudo_audit_dice =
          pseudo.accepted.empty() ? 0.0 : audit_sum / static_cast<double>(pseudo.accepted.size());
    }
  } catch (const std::exception& e) {
    throw std::runtime_error(fmt::format("scenario {}: {}", scenario_name(spec.kind), e.what()));
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::string ComparisonReport::to_csv() const {
  std::string out = ScenarioReport::csv_header();
  for (const auto& r : rows) out += r.to_csv_row();
  return out;
}

std::string ComparisonReport::to_table() const {
  std::ostringstream os;
  os << fmt::format("{:<7} {:>6} {:>7} {:>6} {:>7} {:>7} {:>8} {:>8} {:>7}\n", "DSC",
                    "Tr-LV", "Val-LV", "Tr-RV", "Val-RV", "Tr-Myo", "Val-Myo",
                    "Tst-A/B", "Tst-C");
  for (const auto& r : rows)
    os << fmt::format("{:<7} {:>6.3f} {:>7.3f} {:>6.3f} {:>7.3f} {:>7.3f} {:>8.3f} {:>8.3f} {:>7.3f}\n",
                      scenario_name(r.kind), cls(r.train, 1), cls(r.validation, 1),
                      cls(r.train, 3), cls(r.validation, 3), cls(r.train, 2),
                      cls(r.validation, 2), r.test_ab.average, r.test_c.average);
  return os.str();
}

ComparisonReport compare_scenarios(const std::vector<ScenarioSpec>& specs,
                                   const PhantomCohort& cohort, int jobs) {
  if (jobs < 1) jobs = 1;
  ComparisonReport report;
  report.rows.resize(specs.size());
  if (jobs == 1) {
    for (size_t i = 0; i < specs.size(); ++i) report.rows[i] = run_scenario(specs[i], cohort);
    return report;
  }
  std::atomic<size_t> next{0};
  std::vector<std::future<void>> workers;
  std::mutex error_mutex;
  std::string first_error;
  for (int w = 0; w < jobs; ++w) {
    workers.push_back(std::async(std::launch::async, [&] {
      for (size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) {
        try {
          report.rows[i] = run_scenario(specs[i], cohort);
        } catch (const std::exception& e) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (first_error.empty()) first_error = e.what();
        }
      }
    }));
  }
  for (auto& f : workers) f.get();
  if (!first_error.empty()) throw std::runtime_error(first_error);
  return report;
}

}  // namespace cardseg
