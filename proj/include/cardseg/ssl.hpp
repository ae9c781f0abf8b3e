#pragma once

#include "cardseg/phantom.hpp"
#include "cardseg/trainer.hpp"

namespace cardseg {

enum class ScenarioKind { FS, FS50, FSH, FS50H, SS, SS50, SSH, SS50H };

std::string scenario_name(ScenarioKind k);
ScenarioKind scenario_from_name(const std::string& s);
/// (labeled_fraction, histogram_matching, semi_supervised) is fully
/// determined by the kind.
double scenario_labeled_fraction(ScenarioKind k);
bool scenario_histogram_matching(ScenarioKind k);
bool scenario_semi_supervised(ScenarioKind k);

/// Three cheap, model-agnostic noise tests applied to every pseudo-labeled
/// slice: softmax confidence over predicted foreground, flip-consistency
/// dice, and foreground pixel fraction. All comparisons are inclusive, so
/// all-zero thresholds accept everything.
struct PseudoLabelFilter {
  double min_confidence = 0.9;
  double flip_consistency_min_dice = 0.8;
  std::pair<double, double> foreground_fraction_bounds{0.005, 0.5};
  bool require_all_classes = false;

  void validate() const;
  static PseudoLabelFilter vacuous();
};

struct RejectedSample {
  std::string sample_id;
  std::vector<std::string> reasons;
  double confidence = 0.0;
  double flip_consistency = 0.0;
  double foreground_fraction = 0.0;
};

struct PseudoLabeledSet {
  std::vector<SliceSample> accepted;  // pseudo=true, mask attached
  std::vector<RejectedSample> rejected;
  std::vector<double> accepted_confidence;        // parallel to accepted
  std::vector<double> accepted_flip_consistency;  // parallel to accepted
};

PseudoLabeledSet pseudo_label(const NetworkInstance& net,
                              const std::vector<SliceSample>& unlabeled_samples,
                              const PseudoLabelFilter& filter);

/// Concatenation with identity-collision checking; pseudo provenance is
/// preserved and no down-weighting is applied.
std::vector<SliceSample> merge_datasets(const std::vector<SliceSample>& labeled,
                                        const PseudoLabeledSet& pseudo);

struct ScenarioSpec {
  /// Scenario training uses the full augmentation stack by default;
  /// flip-consistency filtering only works on a flip-robust model.
  ScenarioSpec() { train_config.augmentation = AugmentationPolicy{}; }

  ScenarioKind kind = ScenarioKind::FS;
  uint64_t seed = 0;
  TrainConfig train_config;
  NetworkConfig network;
  std::array<double, 3> split_ratios{0.701, 0.176, 0.123};
  double vendor_c_test_fraction = 0.4;  // C patients held out from the pseudo pool
  PseudoLabelFilter filter;
  int crop_size = 64;
  bool fine_tune = false;  // default: retrain the merged set from scratch
};

struct ScenarioReport {
  ScenarioKind kind = ScenarioKind::FS;
  uint64_t seed = 0;
  DiceReport train, validation, test_ab, test_c;
  int pseudo_accepted = 0;
  int pseudo_rejected = 0;
  double pseudo_audit_dice = 0.0;  // accepted masks vs hidden phantom truth
  double wall_seconds = 0.0;
  std::vector<std::string> audit_rows;  // per-slice acceptance detail (CSV)

  std::string to_csv_row() const;
  static std::string csv_header();
};

/// The full pipeline for one scenario: labeled-fraction subsampling,
/// optional histogram-matching augmentation, supervised training, the
/// optional pseudo-label round with retraining, and evaluation on the
/// validation, A/B test, and held-out vendor-C test splits.
ScenarioReport run_scenario(const ScenarioSpec& spec, const PhantomCohort& cohort);

struct ComparisonReport {
  std::vector<ScenarioReport> rows;

  std::string to_csv() const;
  /// Table shaped like the scenario grid: Tr/Val columns per class in the
  /// order LV, RV, MYO, plus the held-out test columns.
  std::string to_table() const;
};

ComparisonReport compare_scenarios(const std::vector<ScenarioSpec>& specs,
                                   const PhantomCohort& cohort, int jobs = 1);

}  // namespace cardseg
