#include "gtforge/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace gtforge {

const char* to_string(Split s) {
  switch (s) {
    case Split::kAll: return "all";
    case Split::kSeen: return "seen";
    case Split::kOccluded: return "occ";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "all") return Split::kAll;
  if (s == "seen") return Split::kSeen;
  if (s == "occ") return Split::kOccluded;
  throw ConfigError("unknown split '" + s + "'");
}

void MetricSpec::validate() const {
  if (thresholds.empty()) throw ConfigError("at least one N threshold is required");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > 0.0)) throw ConfigError("N thresholds must be positive");
    if (i > 0 && !(thresholds[i] > thresholds[i - 1])) throw ConfigError("N thresholds must be strictly increasing");
  }
}

namespace {

bool selected_by(const GroundTruthSample& s, Split split) {
  switch (split) {
    case Split::kAll: return true;
    case Split::kSeen: return s.visibility == Visibility::kSeen;
    case Split::kOccluded: return s.visibility == Visibility::kOccludedRight;
  }
  return false;
}

void check_dims(const ImageF& pred, const SparseDisparityMap& gt) {
  if (pred.width() != gt.width() || pred.height() != gt.height())
    throw SizeMismatch("prediction is " + std::to_string(pred.width()) + "x" + std::to_string(pred.height()) +
                       ", ground truth is " + std::to_string(gt.width()) + "x" + std::to_string(gt.height()));
}

}  // namespace

PairEvaluation evaluate_pair(const ImageF& pred, const SparseDisparityMap& gt, const MetricSpec& spec, Split split) {
  spec.validate();
  check_dims(pred, gt);
  PairEvaluation ev;
  ev.pair_id = gt.pair_id();
  ev.split = split;
  ev.thresholds = spec.thresholds;
  ev.within_counts.assign(spec.thresholds.size(), 0);
  for (const GroundTruthSample& s : gt.samples()) {
    if (!selected_by(s, split)) continue;
    ++ev.selected;
    const float p = pred(s.col, s.row);
    if (!std::isfinite(p)) {
      ++ev.invalid;
      continue;
    }
    ++ev.valid;
    const double err = std::abs(static_cast<double>(p) - s.disparity);
    ev.abs_error_sum += err;
    for (std::size_t k = 0; k < spec.thresholds.size(); ++k)
      if (err < spec.thresholds[k]) ++ev.within_counts[k];
  }
  if (ev.selected == 0)
    throw EmptySelection("no '" + std::string(to_string(split)) + "' samples in " + (gt.pair_id().empty() ? "map" : gt.pair_id()));
  for (const std::size_t w : ev.within_counts)
    ev.fraction_within.push_back(static_cast<double>(w) / static_cast<double>(ev.selected));
  if (spec.average_error && ev.valid > 0) ev.average_error = ev.abs_error_sum / static_cast<double>(ev.valid);
  return ev;
}

double PairEvaluation::fraction_at(double n) const {
  for (std::size_t k = 0; k < thresholds.size(); ++k)
    if (thresholds[k] == n) return fraction_within[k];
  throw ConfigError("threshold N=" + std::to_string(n) + " was not evaluated");
}

NPixelResult n_pixel_fraction(const ImageF& pred, const SparseDisparityMap& gt, double n, Split split) {
  MetricSpec spec{{n}, false};
  const PairEvaluation ev = evaluate_pair(pred, gt, spec, split);
  return {ev.fraction_within[0], ev.within_counts[0], ev.selected, ev.invalid};
}

AverageError average_error(const ImageF& pred, const SparseDisparityMap& gt, Split split) {
  const PairEvaluation ev = evaluate_pair(pred, gt, MetricSpec{{1.0}, true}, split);
  if (ev.valid == 0) throw EmptySelection("no valid predictions in the selection");
  return {*ev.average_error, ev.valid};
}

std::vector<std::pair<double, double>> cumulative_histogram(const ImageF& pred, const SparseDisparityMap& gt,
                                                            const MetricSpec& spec, Split split) {
  const PairEvaluation ev = evaluate_pair(pred, gt, spec, split);
  std::vector<std::pair<double, double>> curve;
  for (std::size_t k = 0; k < ev.thresholds.size(); ++k) curve.emplace_back(ev.thresholds[k], ev.fraction_within[k]);
  return curve;
}

PairEvaluation pool_evaluations(const std::vector<PairEvaluation>& evals, const std::string& label) {
  if (evals.empty()) throw EmptySelection("nothing to pool");
  PairEvaluation pooled;
  pooled.pair_id = label;
  pooled.split = evals.front().split;
  pooled.thresholds = evals.front().thresholds;
  pooled.within_counts.assign(pooled.thresholds.size(), 0);
  for (const PairEvaluation& e : evals) {
    if (e.thresholds != pooled.thresholds) throw ConfigError("cannot pool evaluations with different thresholds");
    pooled.selected += e.selected;
    pooled.valid += e.valid;
    pooled.invalid += e.invalid;
    pooled.abs_error_sum += e.abs_error_sum;
    for (std::size_t k = 0; k < e.within_counts.size(); ++k) pooled.within_counts[k] += e.within_counts[k];
  }
  for (const std::size_t w : pooled.within_counts)
    pooled.fraction_within.push_back(pooled.selected ? static_cast<double>(w) / static_cast<double>(pooled.selected) : 0.0);
  if (pooled.valid > 0) pooled.average_error = pooled.abs_error_sum / static_cast<double>(pooled.valid);
  return pooled;
}

std::vector<double> mean_of_pair_fractions(const std::vector<PairEvaluation>& evals) {
  if (evals.empty()) throw EmptySelection("nothing to average");
  std::vector<double> mean(evals.front().fraction_within.size(), 0.0);
  for (const PairEvaluation& e : evals)
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += e.fraction_within.at(k);
  for (double& m : mean) m /= static_cast<double>(evals.size());
  return mean;
}

double shift_gain(double p, double p_base) {
  if (!(p_base > 0.0)) throw ZeroBaseline("baseline fraction must be positive");
  return (p / p_base - 1.0) * 100.0;
}

std::vector<ShiftGainRecord> shift_gain_matrix(const std::vector<LabeledEvaluation>& reports,
                                               const std::string& baseline_method, double n) {
  std::map<std::string, double> baseline;
  for (const LabeledEvaluation& r : reports)
    if (r.method == baseline_method) baseline[r.test_dataset] = r.evaluation.fraction_at(n);

  std::vector<ShiftGainRecord> out;
  for (const LabeledEvaluation& r : reports) {
    const auto it = baseline.find(r.test_dataset);
    if (it == baseline.end())
      throw MissingBaseline("no '" + baseline_method + "' evaluation for test dataset '" + r.test_dataset + "'");
    const double p = r.evaluation.fraction_at(n);
    out.push_back({r.test_dataset, r.method, r.train_dataset, n, p, it->second, shift_gain(p, it->second)});
  }
  return out;
}

const char* to_string(BhBin b) {
  switch (b) {
    case BhBin::kSmall: return "small";
    case BhBin::kMiddle: return "middle";
    case BhBin::kLarge: return "large";
  }
  return "?";
}

BhBin bh_bin_from_string(const std::string& s) {
  if (s == "small") return BhBin::kSmall;
  if (s == "middle") return BhBin::kMiddle;
  if (s == "large") return BhBin::kLarge;
  throw FormatError("unknown B/H bin '" + s + "'");
}

BhBin bh_bin(double ratio) {
  if (!(ratio > 0.0)) throw NonPositiveRatio("B/H ratio must be positive");
  if (ratio < 0.4) return BhBin::kSmall;
  if (ratio <= 0.6) return BhBin::kMiddle;
  return BhBin::kLarge;
}

std::vector<FilterVerdict> change_filter_stage1(const std::vector<PairEvaluation>& evals, double threshold) {
  std::vector<FilterVerdict> out;
  out.reserve(evals.size());
  for (const PairEvaluation& e : evals) {
    const double err = e.error_at(1.0);
    out.push_back({e.pair_id, err, threshold, err > threshold});
  }
  return out;
}

std::vector<FilterVerdict> change_filter_stage2(const std::vector<std::string>& pair_ids,
                                                const std::map<std::string, PairEvaluation>& evals,
                                                double threshold) {
  std::vector<FilterVerdict> out;
  out.reserve(pair_ids.size());
  for (const std::string& id : pair_ids) {
    const auto it = evals.find(id);
    if (it == evals.end()) throw MissingPrediction("no stage-2 prediction for pair '" + id + "'");
    const double err = it->second.error_at(1.0);
    out.push_back({id, err, threshold, err > threshold});
  }
  return out;
}

namespace {

// Seeded Fisher-Yates prefix; std::shuffle is not portable across standard libraries.
std::vector<std::string> sample(std::vector<std::string> items, std::size_t k, std::mt19937_64& rng) {
  k = std::min(k, items.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (items.size() - i));
    std::swap(items[i], items[j]);
  }
  items.resize(k);
  return items;
}

}  // namespace

std::vector<std::string> compose_training_set(const std::vector<BinnedPair>& pairs, const std::string& composition,
                                              std::uint64_t seed, std::size_t cap) {
  std::vector<std::string> small, middle, large, everything;
  for (const BinnedPair& p : pairs) {
    everything.push_back(p.pair_id);
    (p.bin == BhBin::kSmall ? small : p.bin == BhBin::kMiddle ? middle : large).push_back(p.pair_id);
  }
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  auto take = [&](const std::vector<std::string>& from, std::size_t k) {
    auto s = sample(from, k, rng);
    out.insert(out.end(), s.begin(), s.end());
  };
  if (composition == "small") take(small, cap);
  else if (composition == "middle") take(middle, cap);
  else if (composition == "large") take(large, cap);
  else if (composition == "fusion") {
    take(small, cap / 2);
    take(large, cap / 2);
  } else if (composition == "ave") {
    take(small, cap / 3);
    take(middle, cap / 3);
    take(large, cap / 3);
  } else if (composition == "random") take(everything, cap);
  else if (composition == "all") {
    take(small, cap);
    take(middle, cap);
    take(large, cap);
  } else if (composition == "full") out = everything;
  else throw ConfigError("unknown training composition '" + composition + "'");
  return out;
}

std::vector<std::string> cap_training_pairs(const std::vector<std::string>& pair_ids, std::uint64_t seed,
                                            std::size_t cap) {
  std::mt19937_64 rng(seed);
  return sample(pair_ids, cap, rng);
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

void write_pair_metrics_csv(const std::filesystem::path& path, const std::vector<PairEvaluation>& evals) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "pair_id,split,N,fraction,avg_err,valid,invalid\n";
  for (const PairEvaluation& e : evals)
    for (std::size_t k = 0; k < e.thresholds.size(); ++k)
      out << e.pair_id << ',' << to_string(e.split) << ',' << fmt(e.thresholds[k]) << ',' << fmt(e.fraction_within[k])
          << ',' << (e.average_error ? fmt(*e.average_error) : std::string("nan")) << ',' << e.valid << ','
          << e.invalid << '\n';
}

void write_shift_gain_csv(const std::filesystem::path& path, const std::vector<ShiftGainRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "test,method,train,N,p,p_base,r_gain\n";
  for (const ShiftGainRecord& r : records)
    out << r.test_dataset << ',' << r.method << ',' << r.train_dataset << ',' << fmt(r.n) << ',' << fmt(r.p) << ','
        << fmt(r.p_base) << ',' << fmt(r.r_gain) << '\n';
}

void write_histogram_svg(const std::filesystem::path& path, const std::vector<CurveSeries>& series) {
  constexpr double kW = 640, kH = 420, kLeft = 60, kRight = 160, kTop = 20, kBottom = 50;
  const double plot_w = kW - kLeft - kRight;
  const double plot_h = kH - kTop - kBottom;
  double max_n = 1.0;
  for (const CurveSeries& s : series)
    for (const double n : s.thresholds) max_n = std::max(max_n, n);
  auto px = [&](double n) { return kLeft + plot_w * n / max_n; };
  auto py = [&](double f) { return kTop + plot_h * (1.0 - f); };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << px(max_n) << "\" y2=\"" << py(0)
      << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << kLeft << "\" y1=\"" << py(0) << "\" x2=\"" << kLeft << "\" y2=\"" << py(1)
      << "\" stroke=\"black\"/>\n";
  for (int pct = 0; pct <= 100; pct += 20) {
    out << "<text x=\"" << kLeft - 8 << "\" y=\"" << fmt(py(pct / 100.0) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << pct << "%</text>\n";
  }
  for (int n = 0; n <= static_cast<int>(max_n); ++n) {
    out << "<text x=\"" << fmt(px(n)) << "\" y=\"" << py(0) + 16 << "\" font-size=\"11\" text-anchor=\"middle\">" << n
        << "</text>\n";
  }
  out << "<text x=\"" << fmt(kLeft + plot_w / 2) << "\" y=\"" << kH - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">N (pixels)</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const CurveSeries& s = series[i];
    const char* color = kColors[i % (sizeof(kColors) / sizeof(kColors[0]))];
    out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.thresholds.size(); ++k)
      out << (k ? " " : "") << fmt(px(s.thresholds[k])) << ',' << fmt(py(s.fractions[k]));
    out << "\"/>\n";
    out << "<text x=\"" << fmt(kW - kRight + 10) << "\" y=\"" << fmt(kTop + 16.0 * static_cast<double>(i + 1))
        << "\" font-size=\"12\" fill=\"" << color << "\">" << s.name << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace gtforge
