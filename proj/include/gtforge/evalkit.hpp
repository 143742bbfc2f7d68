#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gtforge/gtgen.hpp"
#include "gtforge/raster.hpp"

namespace gtforge {

enum class Split { kAll, kSeen, kOccluded };

const char* to_string(Split s);
Split split_from_string(const std::string& s);

/// N-pixel thresholds; must be positive and strictly increasing.
struct MetricSpec {
  std::vector<double> thresholds = {1, 2, 3, 5, 9};
  bool average_error = true;

  void validate() const;
};

struct NPixelResult {
  double fraction = 0.0;      // within / selected
  std::size_t within = 0;     // valid samples with |pred - d| < N
  std::size_t selected = 0;   // GT samples in the split
  std::size_t invalid = 0;    // selected samples whose prediction is not finite

  double error() const { return 1.0 - fraction; }
};

/// Fraction of split-selected GT samples predicted within N pixels. A
/// non-finite prediction is never within N. Throws EmptySelection.
NPixelResult n_pixel_fraction(const ImageF& pred, const SparseDisparityMap& gt, double n, Split split);

struct AverageError {
  double value = 0.0;
  std::size_t valid = 0;
};

/// Mean |pred - d| over selected samples with a finite prediction.
AverageError average_error(const ImageF& pred, const SparseDisparityMap& gt, Split split);

struct PairEvaluation {
  std::string pair_id;
  Split split = Split::kAll;
  std::vector<double> thresholds;
  std::vector<double> fraction_within;
  std::vector<std::size_t> within_counts;
  std::size_t selected = 0;
  std::size_t valid = 0;
  std::size_t invalid = 0;
  std::optional<double> average_error;
  double abs_error_sum = 0.0;

  double fraction_at(double n) const;
  double error_at(double n) const { return 1.0 - fraction_at(n); }
};

/// All thresholds of `spec` (the cumulative-histogram curve) plus average error.
PairEvaluation evaluate_pair(const ImageF& pred, const SparseDisparityMap& gt, const MetricSpec& spec, Split split);

/// Same as evaluate_pair; the curve as a (N, fraction) list.
std::vector<std::pair<double, double>> cumulative_histogram(const ImageF& pred, const SparseDisparityMap& gt,
                                                            const MetricSpec& spec, Split split);

/// Pixel-weighted pooling: sum of within counts over sum of selected counts.
PairEvaluation pool_evaluations(const std::vector<PairEvaluation>& evals, const std::string& label = "pooled");

/// Unweighted mean of the per-pair fractions at each threshold.
std::vector<double> mean_of_pair_fractions(const std::vector<PairEvaluation>& evals);

/// Relative shift gain (p / p_base - 1) * 100. Throws ZeroBaseline for p_base <= 0.
double shift_gain(double p, double p_base);

struct ShiftGainRecord {
  std::string test_dataset;
  std::string method;
  std::string train_dataset;
  double n = 3.0;
  double p = 0.0;
  double p_base = 0.0;
  double r_gain = 0.0;
};

struct LabeledEvaluation {
  std::string test_dataset;
  std::string method;
  std::string train_dataset;
  PairEvaluation evaluation;
};

/// One record per non-baseline evaluation, gains taken against the baseline
/// method on the same test dataset. Throws MissingBaseline.
std::vector<ShiftGainRecord> shift_gain_matrix(const std::vector<LabeledEvaluation>& reports,
                                               const std::string& baseline_method, double n = 3.0);

enum class BhBin { kSmall, kMiddle, kLarge };

const char* to_string(BhBin b);
BhBin bh_bin_from_string(const std::string& s);

/// small < 0.4 <= middle <= 0.6 < large. Throws NonPositiveRatio.
BhBin bh_bin(double ratio);

struct FilterVerdict {
  std::string pair_id;
  double one_pixel_error = 0.0;
  double threshold = 0.0;
  bool dropped = false;
};

/// Drops a pair iff its baseline 1-pixel error is strictly above the threshold.
std::vector<FilterVerdict> change_filter_stage1(const std::vector<PairEvaluation>& evals, double threshold = 0.60);

/// Same rule for an arbitrary second-stage predictor. Every listed pair must
/// have an evaluation; throws MissingPrediction naming the first that does not.
std::vector<FilterVerdict> change_filter_stage2(const std::vector<std::string>& pair_ids,
                                                const std::map<std::string, PairEvaluation>& evals,
                                                double threshold = 0.40);

struct BinnedPair {
  std::string pair_id;
  BhBin bin = BhBin::kMiddle;
};

/// Deterministic seeded training-set selection for the B/H compositions
/// small, middle, large, fusion, ave, random, all, full. `cap` is the per-set
/// budget (1200 by default); bins short of their quota contribute what they have.
std::vector<std::string> compose_training_set(const std::vector<BinnedPair>& pairs, const std::string& composition,
                                              std::uint64_t seed, std::size_t cap = 1200);

/// Caps a dataset's training pairs at `cap` with a seeded selection.
std::vector<std::string> cap_training_pairs(const std::vector<std::string>& pair_ids, std::uint64_t seed,
                                            std::size_t cap = 1200);

// CSV: pair_id,split,N,fraction,avg_err,valid,invalid
void write_pair_metrics_csv(const std::filesystem::path& path, const std::vector<PairEvaluation>& evals);
// CSV: test,method,train,N,p,p_base,r_gain
void write_shift_gain_csv(const std::filesystem::path& path, const std::vector<ShiftGainRecord>& records);

struct CurveSeries {
  std::string name;
  std::vector<double> thresholds;
  std::vector<double> fractions;
};

/// Cumulative-histogram plot: one polyline per series, y axis 0-100 %, N on x.
void write_histogram_svg(const std::filesystem::path& path, const std::vector<CurveSeries>& series);

}  // namespace gtforge
