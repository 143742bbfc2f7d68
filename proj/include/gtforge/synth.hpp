#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "gtforge/geometry.hpp"
#include "gtforge/pointcloud.hpp"
#include "gtforge/raster.hpp"
#include "gtforge/registration.hpp"
#include "gtforge/surface.hpp"

namespace gtforge {

/// Axis-aligned building standing on the ground plane.
struct SynthBox {
  Vec2 min = Vec2::Zero();
  Vec2 max = Vec2::Zero();
  double height = 0.0;
  bool in_lidar = true;   // present when the cloud was acquired
  bool in_images = true;  // present when the images were taken
};

struct SynthCameraStrip {
  int count = 3;
  double focal = 500.0;
  int width = 256;
  int height = 256;
  double altitude = 100.0;  // above the ground plane
  double spacing = 20.0;    // along +x
  Vec2 start = Vec2::Zero();
};

struct SynthRecipe {
  double plane_z = 0.0;
  Vec2 extent_min{-50.0, -50.0};
  Vec2 extent_max{50.0, 50.0};
  std::vector<SynthBox> boxes;
  double lidar_spacing = 0.5;
  double lidar_jitter = 0.25;  // fraction of the spacing
  double texture_cell = 0.5;   // lattice spacing of the value noise, meters
  SynthCameraStrip cameras;
  int tiepoints = 200;
  double perturb_rotation_deg = 0.0;
  double perturb_translation_m = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SceneHit {
  double t = 0.0;
  Vec3 point = Vec3::Zero();
  int normal_axis = 2;  // 0: x face, 1: y face, 2: horizontal
};

/// Nearest intersection of origin + t*dir (t > 0) with the image-time scene.
std::optional<SceneHit> cast_scene_ray(const SynthRecipe& recipe, const Vec3& origin, const Vec3& dir,
                                       bool lidar_scene = false);

/// Height of the LiDAR-time surface at (x, y).
double lidar_surface_height(const SynthRecipe& recipe, double x, double y);

/// Smooth value noise in [0, 255].
double texture_value(std::uint64_t seed, double u, double v, double cell);

std::vector<OrientedCamera> synth_cameras(const SynthRecipe& recipe);
PointCloud synth_cloud(const SynthRecipe& recipe);
ImageF render_view(const SynthRecipe& recipe, const OrientedCamera& cam);
std::vector<TiePoint> synth_tiepoints(const SynthRecipe& recipe, const PointCloud& cloud,
                                      const std::vector<OrientedCamera>& cams);
std::vector<OrientedCamera> perturb_cameras(const std::vector<OrientedCamera>& cams, double rotation_deg,
                                            double translation_m, std::uint64_t seed);
SurfaceMesh scene_mesh(const SynthRecipe& recipe);

}  // namespace gtforge
