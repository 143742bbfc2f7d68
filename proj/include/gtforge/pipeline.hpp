#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gtforge/evalkit.hpp"
#include "gtforge/gtgen.hpp"
#include "gtforge/matcher.hpp"
#include "gtforge/registration.hpp"
#include "gtforge/synth.hpp"

namespace gtforge {

namespace fs = std::filesystem;

struct CameraEntry {
  std::string id;
  fs::path pose;
  fs::path image;  // may be empty when no stage needs pixels
};

/// Labeled prediction set for the shift-gain matrix.
struct PredictionSet {
  std::string method;
  std::string train_dataset;
  std::string test_dataset;
  fs::path directory;
};

struct PipelineConfig {
  fs::path config_path;
  fs::path output;

  fs::path cloud;
  std::vector<CameraEntry> cameras;
  std::optional<fs::path> tiepoints;
  std::optional<double> ground_height;
  bool use_refined_poses = false;

  std::uint64_t seed = 0;
  int workers = 1;

  double min_overlap = 0.5;
  double isolation_radius = 3.0;
  double dz_max = 2.0;
  GtGenOptions gtgen;
  bool alpha_enabled = true;
  AlphaFilterConfig alpha;
  RegistrationConfig registration;
  SgmParams sgm;
  double stage1_threshold = 0.60;
  double stage2_threshold = 0.40;
  MetricSpec metrics;
  std::string baseline_method = "sgm";
  double shift_gain_n = 3.0;
  std::vector<PredictionSet> prediction_sets;
  std::size_t training_cap = 1200;

  std::optional<SynthRecipe> synth;

  /// Parameter preconditions; dataset paths are checked by validate_dataset.
  void validate() const;
  /// Throws ConfigError naming the first referenced path that does not exist.
  void validate_dataset(bool need_images, bool need_cloud) const;
  fs::path pose_path(const CameraEntry& cam) const;
};

/// Relative paths inside the file resolve against its directory.
PipelineConfig load_config(const fs::path& path);

enum class PairStatus { kActive, kDroppedStage1, kDroppedStage2 };
const char* to_string(PairStatus s);
PairStatus pair_status_from_string(const std::string& s);

struct PairEntry {
  std::string pair_id;
  std::string left;
  std::string right;
  double overlap_fraction = 0.0;
  double bh_ratio = 0.0;
  std::optional<BhBin> bin;  // unset when the centers coincide
  double gsd = 0.0;
  PairStatus status = PairStatus::kActive;
};

class PairManifest {
 public:
  PairManifest() = default;
  explicit PairManifest(std::vector<PairEntry> pairs);

  const std::vector<PairEntry>& pairs() const { return pairs_; }
  std::vector<const PairEntry*> active() const;
  const PairEntry& at(const std::string& pair_id) const;
  /// Only active -> dropped_* is allowed; setting the current status again is a no-op.
  void set_status(const std::string& pair_id, PairStatus status);

 private:
  std::vector<PairEntry> pairs_;
};

PairManifest read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const PairManifest& manifest);

struct CommandOptions {
  std::optional<fs::path> manifest;
  int stage = 1;
  std::optional<fs::path> predictions;
  std::string method = "sgm";
};

/// Each command returns the process exit code: 0 ok, 1 partial failure.
int cmd_pairs(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_register(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_gen_gt(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_match(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_filter(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_eval(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_synth(const PipelineConfig& cfg, const CommandOptions& opts);
int cmd_report(const PipelineConfig& cfg, const CommandOptions& opts);

fs::path manifest_path(const PipelineConfig& cfg, const CommandOptions& opts);
fs::path gt_path(const PipelineConfig& cfg, const std::string& pair_id);
fs::path baseline_predictions_dir(const PipelineConfig& cfg);

/// Worker count from the config unless GTFORGE_WORKERS is set.
int resolve_workers(int configured);

}  // namespace gtforge
