#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "gtforge/raster.hpp"

namespace gtforge {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera with exterior orientation.
///
/// Convention: x right, y down, z forward. A world point maps to the camera
/// frame as p_cam = R (p_world - C); pixel = f * p_cam.xy / p_cam.z + pp.
/// Pixel (i, j) has its center at continuous coordinate (i, j).
class OrientedCamera {
 public:
  OrientedCamera() = default;

  /// Throws InvalidCamera when the invariants do not hold.
  OrientedCamera(double focal, Vec2 principal_point, int width, int height, Mat3 rotation, Vec3 center);

  double focal() const { return focal_; }
  const Vec2& principal_point() const { return principal_point_; }
  int width() const { return width_; }
  int height() const { return height_; }
  const Mat3& rotation() const { return rotation_; }
  const Vec3& center() const { return center_; }

  /// Camera viewing direction (+z axis) in world coordinates.
  Vec3 view_direction() const { return rotation_.row(2).transpose(); }

  Vec3 to_camera(const Vec3& world) const { return rotation_ * (world - center_); }

  /// Unit world-space direction of the ray through a continuous pixel.
  Vec3 pixel_ray(const Vec2& pixel) const;

  Eigen::Matrix3d intrinsics() const;

 private:
  double focal_ = 1.0;
  Vec2 principal_point_ = Vec2::Zero();
  int width_ = 1;
  int height_ = 1;
  Mat3 rotation_ = Mat3::Identity();
  Vec3 center_ = Vec3::Zero();
};

struct Projection {
  Vec2 pixel;
  double depth = 0.0;
};

/// Continuous (unrounded) projection. Throws PointBehindCamera for depth <= 0.
Projection project(const Vec3& world, const OrientedCamera& cam);

/// A rectified stereo pair. Both rectified cameras share rotation, focal and
/// principal point; the baseline runs along the rectified x axis.
struct EpipolarGeometry {
  OrientedCamera left;
  OrientedCamera right;
  double baseline = 0.0;
  Mat3 rect_rotation_left = Mat3::Identity();   // original left camera frame -> rectified frame
  Mat3 rect_rotation_right = Mat3::Identity();  // original right camera frame -> rectified frame

  double focal() const { return left.focal(); }
};

/// Throws CoincidentCenters when the optical centers are closer than 1e-9 m.
EpipolarGeometry rectify_pair(const OrientedCamera& left, const OrientedCamera& right);

struct RectifiedProjection {
  Vec2 left;
  Vec2 right;
  double depth = 0.0;  // rectified depth z of the left camera

  double disparity() const { return left.x() - right.x(); }
};

RectifiedProjection project_rectified(const Vec3& world, const EpipolarGeometry& geom);

/// Baseline over flying height above the given ground elevation.
double base_height_ratio(const EpipolarGeometry& geom, double mean_ground_elevation);

/// Median of the supplied heights, used as the ground reference for B/H.
double median_elevation(std::vector<double> heights);

struct StereoPairMeta {
  std::string pair_id;
  double bh_ratio = 0.0;
  double gsd = 0.0;
  double overlap_fraction = 0.0;
};

/// Counter-clockwise ground polygon (x, y in world meters).
struct FootprintPolygon {
  std::vector<Vec2> vertices;

  double area() const;
};

FootprintPolygon footprint(const OrientedCamera& cam, double ground_height);

/// Intersection area of two convex polygons divided by area(a), in [0, 1].
double overlap_fraction(const FootprintPolygon& a, const FootprintPolygon& b);

enum class Side { kLeft, kRight };

struct RectifiedImage {
  ImageF image;
  Mask valid;
};

/// Bilinear resampling of an original image into its rectified frame.
/// Pixels whose source location falls outside the image become 0 with valid = 0.
RectifiedImage resample_rectified(const ImageF& image, const OrientedCamera& cam, const EpipolarGeometry& geom,
                                  Side side);

/// Homography mapping rectified pixel (homogeneous) to source pixel.
Mat3 rectifying_homography(const OrientedCamera& cam, const EpipolarGeometry& geom, Side side);

// Pose files: JSON documents with keys focal, principal_point, image_size,
// rotation (row-major 9 floats), center (3 floats) and units.
OrientedCamera read_pose(const std::filesystem::path& path);
void write_pose(const std::filesystem::path& path, const OrientedCamera& cam);

double orthonormality_error(const Mat3& r);

}  // namespace gtforge
