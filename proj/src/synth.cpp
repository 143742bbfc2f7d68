#include "gtforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "gtforge/errors.hpp"

namespace gtforge {

void SynthRecipe::validate() const {
  if (!(extent_max.x() > extent_min.x() && extent_max.y() > extent_min.y()))
    throw ConfigError("synth extent must have positive size");
  if (!(lidar_spacing > 0.0)) throw ConfigError("synth lidar spacing must be positive");
  if (!(lidar_jitter >= 0.0 && lidar_jitter < 0.5)) throw ConfigError("synth lidar jitter must lie in [0, 0.5)");
  if (!(texture_cell > 0.0)) throw ConfigError("synth texture cell must be positive");
  if (cameras.count < 1) throw ConfigError("synth needs at least one camera");
  if (cameras.width < 2 || cameras.height < 2) throw ConfigError("synth image size must be at least 2x2");
  if (!(cameras.focal > 0.0)) throw ConfigError("synth focal must be positive");
  if (!(cameras.altitude > 0.0)) throw ConfigError("synth altitude must be positive");
  if (tiepoints < 0) throw ConfigError("synth tie point count must be non-negative");
  for (const SynthBox& b : boxes) {
    if (!(b.max.x() > b.min.x() && b.max.y() > b.min.y())) throw ConfigError("synth box must have positive footprint");
    if (!(b.height > 0.0)) throw ConfigError("synth box height must be positive");
    if (b.height >= cameras.altitude) throw ConfigError("synth box reaches the camera altitude");
  }
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double lattice(std::uint64_t seed, std::int64_t i, std::int64_t j) {
  const std::uint64_t h = splitmix(seed ^ splitmix(static_cast<std::uint64_t>(i) * 0x632be59bd9b4e019ull ^
                                                   splitmix(static_cast<std::uint64_t>(j))));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double noise(std::uint64_t seed, double u, double v) {
  const double fu = std::floor(u), fv = std::floor(v);
  const auto i = static_cast<std::int64_t>(fu);
  const auto j = static_cast<std::int64_t>(fv);
  const double a = smooth(u - fu), b = smooth(v - fv);
  const double v00 = lattice(seed, i, j), v10 = lattice(seed, i + 1, j);
  const double v01 = lattice(seed, i, j + 1), v11 = lattice(seed, i + 1, j + 1);
  return (v00 * (1 - a) + v10 * a) * (1 - b) + (v01 * (1 - a) + v11 * a) * b;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

Vec3 random_unit(std::mt19937_64& rng) {
  for (;;) {
    const Vec3 v(2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1, 2 * uniform01(rng) - 1);
    const double n = v.norm();
    if (n > 1e-3 && n <= 1.0) return v / n;
  }
}

// Slab test; returns entry distance and the axis of the entry face.
std::optional<std::pair<double, int>> hit_box(const Vec3& lo, const Vec3& hi, const Vec3& o, const Vec3& d) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis = 2;
  for (int k = 0; k < 3; ++k) {
    if (d[k] == 0.0) {
      if (o[k] < lo[k] || o[k] > hi[k]) return std::nullopt;
      continue;
    }
    double a = (lo[k] - o[k]) / d[k];
    double b = (hi[k] - o[k]) / d[k];
    if (a > b) std::swap(a, b);
    if (a > t0) {
      t0 = a;
      axis = k;
    }
    t1 = std::min(t1, b);
  }
  if (t0 > t1 || !(t0 > 0.0)) return std::nullopt;
  return std::make_pair(t0, axis);
}

}  // namespace

double texture_value(std::uint64_t seed, double u, double v, double cell) {
  const double coarse = noise(seed, u / cell, v / cell);
  const double fine = noise(seed ^ 0x5bd1e995ull, u / (0.45 * cell), v / (0.45 * cell));
  return 255.0 * (0.7 * coarse + 0.3 * fine);
}

std::optional<SceneHit> cast_scene_ray(const SynthRecipe& recipe, const Vec3& origin, const Vec3& dir,
                                       bool lidar_scene) {
  std::optional<SceneHit> best;
  if (dir.z() != 0.0) {
    const double t = (recipe.plane_z - origin.z()) / dir.z();
    if (t > 0.0) best = SceneHit{t, origin + t * dir, 2};
  }
  for (const SynthBox& b : recipe.boxes) {
    if (lidar_scene ? !b.in_lidar : !b.in_images) continue;
    const Vec3 lo(b.min.x(), b.min.y(), recipe.plane_z);
    const Vec3 hi(b.max.x(), b.max.y(), recipe.plane_z + b.height);
    const auto h = hit_box(lo, hi, origin, dir);
    if (h && (!best || h->first < best->t)) best = SceneHit{h->first, origin + h->first * dir, h->second};
  }
  return best;
}

double lidar_surface_height(const SynthRecipe& recipe, double x, double y) {
  double z = recipe.plane_z;
  for (const SynthBox& b : recipe.boxes)
    if (b.in_lidar && x >= b.min.x() && x <= b.max.x() && y >= b.min.y() && y <= b.max.y())
      z = std::max(z, recipe.plane_z + b.height);
  return z;
}

std::vector<OrientedCamera> synth_cameras(const SynthRecipe& recipe) {
  const SynthCameraStrip& s = recipe.cameras;
  Mat3 nadir;
  nadir << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  const Vec2 pp((s.width - 1) / 2.0, (s.height - 1) / 2.0);
  std::vector<OrientedCamera> cams;
  for (int k = 0; k < s.count; ++k) {
    const Vec3 c(s.start.x() + k * s.spacing, s.start.y(), recipe.plane_z + s.altitude);
    cams.emplace_back(s.focal, pp, s.width, s.height, nadir, c);
  }
  return cams;
}

PointCloud synth_cloud(const SynthRecipe& recipe) {
  std::mt19937_64 rng(recipe.seed ^ 0x1d4a7c0ffeeull);
  const double s = recipe.lidar_spacing;
  const auto nx = static_cast<std::int64_t>(std::floor((recipe.extent_max.x() - recipe.extent_min.x()) / s)) + 1;
  const auto ny = static_cast<std::int64_t>(std::floor((recipe.extent_max.y() - recipe.extent_min.y()) / s)) + 1;
  std::vector<LidarPoint> pts;
  pts.reserve(static_cast<std::size_t>(nx * ny));
  for (std::int64_t j = 0; j < ny; ++j) {
    for (std::int64_t i = 0; i < nx; ++i) {
      const double jx = (2 * uniform01(rng) - 1) * recipe.lidar_jitter * s;
      const double jy = (2 * uniform01(rng) - 1) * recipe.lidar_jitter * s;
      const double x = recipe.extent_min.x() + static_cast<double>(i) * s + jx;
      const double y = recipe.extent_min.y() + static_cast<double>(j) * s + jy;
      LidarPoint p;
      p.position = Vec3(x, y, lidar_surface_height(recipe, x, y));
      p.echo_index = 1;
      p.intensity = static_cast<float>(texture_value(recipe.seed, x, y, recipe.texture_cell));
      pts.push_back(p);
    }
  }
  return PointCloud(std::move(pts));
}

ImageF render_view(const SynthRecipe& recipe, const OrientedCamera& cam) {
  ImageF img(cam.width(), cam.height(), 0.0f);
  for (int y = 0; y < cam.height(); ++y) {
    for (int x = 0; x < cam.width(); ++x) {
      const Vec3 dir = cam.pixel_ray(Vec2(x, y));
      const auto hit = cast_scene_ray(recipe, cam.center(), dir);
      if (!hit) continue;
      const Vec3& p = hit->point;
      double v;
      if (hit->normal_axis == 0) v = texture_value(recipe.seed, p.y() + 1000.0, p.z() + 2000.0, recipe.texture_cell);
      else if (hit->normal_axis == 1) v = texture_value(recipe.seed, p.x() + 3000.0, p.z() + 4000.0, recipe.texture_cell);
      else v = texture_value(recipe.seed, p.x(), p.y(), recipe.texture_cell);
      img(x, y) = static_cast<float>(std::round(v));
    }
  }
  return img;
}

std::vector<TiePoint> synth_tiepoints(const SynthRecipe& recipe, const PointCloud& cloud,
                                      const std::vector<OrientedCamera>& cams) {
  std::vector<TiePoint> out;
  if (cloud.empty()) return out;
  std::mt19937_64 rng(recipe.seed ^ 0x7e1e5ull);
  const std::size_t attempts = static_cast<std::size_t>(recipe.tiepoints) * 20;
  for (std::size_t a = 0; a < attempts && out.size() < static_cast<std::size_t>(recipe.tiepoints); ++a) {
    const Vec3& p = cloud[static_cast<std::size_t>(rng() % cloud.size())].position;
    TiePoint tp;
    tp.position = p;
    for (std::size_t c = 0; c < cams.size(); ++c) {
      const Vec3 pc = cams[c].to_camera(p);
      if (!(pc.z() > 0.0)) continue;
      const Projection pr = project(p, cams[c]);
      if (pr.pixel.x() < 0 || pr.pixel.y() < 0 || pr.pixel.x() > cams[c].width() - 1 ||
          pr.pixel.y() > cams[c].height() - 1)
        continue;
      const Vec3 dir = (p - cams[c].center()).normalized();
      const auto hit = cast_scene_ray(recipe, cams[c].center(), dir);
      if (!hit || std::abs(hit->t - (p - cams[c].center()).norm()) > 1e-4) continue;
      tp.observations.push_back({c, pr.pixel});
    }
    if (tp.observations.size() >= 2) out.push_back(std::move(tp));
  }
  return out;
}

std::vector<OrientedCamera> perturb_cameras(const std::vector<OrientedCamera>& cams, double rotation_deg,
                                            double translation_m, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0xbadc0deull);
  std::vector<OrientedCamera> out;
  for (const OrientedCamera& cam : cams) {
    const Vec3 axis = random_unit(rng);
    const Vec3 shift = random_unit(rng) * translation_m;
    const Mat3 dr = Eigen::AngleAxisd(rotation_deg * M_PI / 180.0, axis).toRotationMatrix();
    out.emplace_back(cam.focal(), cam.principal_point(), cam.width(), cam.height(), Mat3(cam.rotation() * dr),
                     Vec3(cam.center() + shift));
  }
  return out;
}

SurfaceMesh scene_mesh(const SynthRecipe& recipe) {
  SurfaceMesh mesh;
  auto quad = [&](const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    const auto base = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.insert(mesh.vertices.end(), {a, b, c, d});
    for (const Triangle& t : {Triangle{base, base + 1, base + 2}, Triangle{base, base + 2, base + 3}}) {
      mesh.triangles.push_back(t);
      double lo = mesh.vertices[t[0]].z(), hi = lo;
      for (const std::uint32_t v : t) {
        lo = std::min(lo, mesh.vertices[v].z());
        hi = std::max(hi, mesh.vertices[v].z());
      }
      mesh.z_span.push_back(hi - lo);
    }
  };
  const double z0 = recipe.plane_z;
  const Vec2& lo = recipe.extent_min;
  const Vec2& hi = recipe.extent_max;
  quad({lo.x(), lo.y(), z0}, {hi.x(), lo.y(), z0}, {hi.x(), hi.y(), z0}, {lo.x(), hi.y(), z0});
  for (const SynthBox& b : recipe.boxes) {
    if (!b.in_images) continue;
    const double z1 = z0 + b.height;
    const Vec3 p00(b.min.x(), b.min.y(), 0), p10(b.max.x(), b.min.y(), 0), p11(b.max.x(), b.max.y(), 0),
        p01(b.min.x(), b.max.y(), 0);
    auto at = [](const Vec3& p, double z) { return Vec3(p.x(), p.y(), z); };
    quad(at(p00, z1), at(p10, z1), at(p11, z1), at(p01, z1));
    quad(at(p00, z0), at(p10, z0), at(p10, z1), at(p00, z1));
    quad(at(p10, z0), at(p11, z0), at(p11, z1), at(p10, z1));
    quad(at(p11, z0), at(p01, z0), at(p01, z1), at(p11, z1));
    quad(at(p01, z0), at(p00, z0), at(p00, z1), at(p01, z1));
  }
  return mesh;
}

}  // namespace gtforge
