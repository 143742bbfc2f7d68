#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gtforge/geometry.hpp"
#include "gtforge/pointcloud.hpp"
#include "gtforge/raster.hpp"
#include "gtforge/surface.hpp"

namespace gtforge {

enum class Visibility : std::uint8_t {
  kSeen,           // visible in both rectified views
  kOccludedRight,  // visible in the left view only
};

const char* to_string(Visibility v);
Visibility visibility_from_string(const std::string& s);

struct GroundTruthSample {
  int col = 0;  // left rectified image pixel
  int row = 0;
  double x_left = 0.0;
  double x_right = 0.0;
  double disparity = 0.0;  // x_left - x_right
  Visibility visibility = Visibility::kSeen;
  std::int64_t source_point = -1;

  bool operator==(const GroundTruthSample&) const = default;
};

/// At most one sample per pixel, kept in row-major pixel order.
class SparseDisparityMap {
 public:
  SparseDisparityMap() = default;
  /// Throws FormatError for out-of-bounds or duplicate pixels.
  SparseDisparityMap(int width, int height, std::string pair_id, std::vector<GroundTruthSample> samples);

  int width() const { return width_; }
  int height() const { return height_; }
  const std::string& pair_id() const { return pair_id_; }
  const std::vector<GroundTruthSample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }

  const GroundTruthSample* find(int col, int row) const;
  std::size_t count(Visibility v) const;

  bool operator==(const SparseDisparityMap&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::string pair_id_;
  std::vector<GroundTruthSample> samples_;
};

struct GtGenOptions {
  double epsilon = 0.25;  // self-occlusion offset along each sight ray, meters
  int workers = 1;
};

/// Two-ray occlusion-aware projection of a filtered cloud into a rectified pair.
/// The index must have been built from a mesh over this same cloud.
SparseDisparityMap generate_gt(const PointCloud& cloud, const RayIndex& index, const EpipolarGeometry& geom,
                               const GtGenOptions& options = {}, const std::string& pair_id = {});

enum class AlphaDirection { kRemoveDeeper, kRemoveShallower };

struct AlphaFilterConfig {
  int window_radius = 5;
  double alpha_threshold = 0.3;
  int min_window_samples = 4;
  AlphaDirection direction = AlphaDirection::kRemoveDeeper;

  void validate() const;
};

/// Image-space disparity filter. With alpha = (d - d_min) / (d_max - d_min)
/// over the (2r+1)^2 window (candidate included), remove_deeper drops a sample
/// when alpha < threshold and d is below the window median.
SparseDisparityMap alpha_filter(const SparseDisparityMap& map, const AlphaFilterConfig& cfg = {});

/// Native sparse text format.
void write_gt(const std::filesystem::path& path, const SparseDisparityMap& map);
SparseDisparityMap read_gt(const std::filesystem::path& path);

/// Dense raster with +inf at pixels without a (selected) sample.
ImageF to_dense(const SparseDisparityMap& map, bool include_occluded = false);
void write_gt_pfm(const std::filesystem::path& path, const SparseDisparityMap& map, bool include_occluded = false);

/// 16-bit PNG: value = round(d * 256), 0 = invalid. Disparities outside
/// (0, 65535/256] are not representable and are written as invalid.
void write_gt_png16(const std::filesystem::path& path, const SparseDisparityMap& map, bool include_occluded = false);

}  // namespace gtforge
