#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "gtforge/geometry.hpp"

namespace gtforge {

struct LidarPoint {
  Vec3 position = Vec3::Zero();
  std::uint8_t echo_index = 1;  // 1 = first return
  std::optional<float> intensity;

  bool operator==(const LidarPoint& o) const {
    return position == o.position && echo_index == o.echo_index && intensity == o.intensity;
  }
};

class PointCloud {
 public:
  PointCloud() = default;
  explicit PointCloud(std::vector<LidarPoint> points, std::string source_path = {});

  const std::vector<LidarPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const LidarPoint& operator[](std::size_t i) const { return points_[i]; }

  /// Encloses all points; empty (min > max) for an empty cloud.
  const Eigen::AlignedBox3d& bounds() const { return bounds_; }
  const std::string& source_path() const { return source_path_; }

  std::vector<double> heights() const;

  bool operator==(const PointCloud& o) const { return points_ == o.points_; }

 private:
  std::vector<LidarPoint> points_;
  Eigen::AlignedBox3d bounds_;
  std::string source_path_;
};

enum class CloudFormat { kXyz, kPly, kLas };

/// Guesses the format from the file extension; throws UnsupportedFormat.
CloudFormat cloud_format_from_path(const std::filesystem::path& path);

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);

enum class PlyEncoding { kAscii, kBinaryLittleEndian };

/// Writes x, y, z as float64 plus echo (uchar) and intensity (float) when present.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud, PlyEncoding encoding);
void write_xyz(const std::filesystem::path& path, const PointCloud& cloud);

PointCloud keep_first_echo(const PointCloud& cloud);

/// Keeps a point iff another point lies within `radius` (3D, inclusive).
PointCloud remove_isolated(const PointCloud& cloud, double radius = 3.0);

}  // namespace gtforge
