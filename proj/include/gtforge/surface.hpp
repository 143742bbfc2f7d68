#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gtforge/pointcloud.hpp"

namespace gtforge {

using Triangle = std::array<std::uint32_t, 3>;

/// 2.5D surface: a Delaunay triangulation of the (x, y) projections with z
/// carried on the vertices. `vertices` is index-aligned with the source cloud;
/// sites dropped as (x, y) duplicates are simply not referenced.
struct SurfaceMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;  // counter-clockwise in the xy plane
  std::vector<double> z_span;       // max - min vertex z, per triangle
};

/// Bowyer-Watson incremental Delaunay triangulation in the horizontal plane.
/// Throws DegenerateInput for fewer than 3 distinct sites or collinear input.
SurfaceMesh triangulate_xy(const PointCloud& cloud);
SurfaceMesh triangulate_xy(std::vector<Vec3> vertices);

/// Drops triangles whose z span exceeds dz_max (a span equal to dz_max is kept).
SurfaceMesh filter_steep_triangles(const SurfaceMesh& mesh, double dz_max = 2.0);

/// ASCII PLY with vertex and face elements, for inspection.
void write_mesh_ply(const std::filesystem::path& path, const SurfaceMesh& mesh);

/// Segment/triangle test (Moller-Trumbore): the segment is origin + t * delta
/// for t in the open interval (0, 1); triangle edges count as hits.
bool segment_hits_triangle(const Vec3& origin, const Vec3& delta, const Vec3& v0, const Vec3& v1, const Vec3& v2);

/// Bounding-volume hierarchy over the triangles of a mesh.
class RayIndex {
 public:
  static constexpr std::size_t kLeafSize = 4;

  RayIndex() = default;
  explicit RayIndex(const SurfaceMesh& mesh);

  std::size_t vertex_count() const { return vertex_count_; }
  std::size_t triangle_count() const { return tris_.size(); }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t leaf_count() const;

  /// True iff the open segment (origin, origin + delta) hits any triangle.
  bool any_hit(const Vec3& origin, const Vec3& delta) const;

  /// Indices (into the mesh triangle list) of every hit triangle, ascending.
  std::vector<std::uint32_t> all_hits(const Vec3& origin, const Vec3& delta) const;

  /// Structural self-check: boxes enclose children and every triangle sits in exactly one leaf.
  bool validate() const;

 private:
  struct Node {
    Eigen::AlignedBox3d box;
    std::uint32_t first = 0;  // leaf: first triangle slot; inner: left child
    std::uint32_t count = 0;  // leaf: triangle count; inner: 0
    std::uint32_t right = 0;  // inner only
  };
  struct Tri {
    Vec3 v0, v1, v2;
    std::uint32_t id;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::vector<Vec3>& centroids);

  template <typename Visit>
  void traverse(const Vec3& origin, const Vec3& delta, Visit&& visit) const;

  std::vector<Node> nodes_;
  std::vector<Tri> tris_;
  std::size_t vertex_count_ = 0;
};

RayIndex build_ray_index(const SurfaceMesh& mesh);

/// True iff the segment from point + epsilon * dir to optical_center crosses
/// a triangle of the index, dir being the unit direction toward the center.
bool ray_occluded(const Vec3& point, const Vec3& optical_center, const RayIndex& index, double epsilon = 0.25);

}  // namespace gtforge
